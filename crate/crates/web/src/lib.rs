//! Browser bindings: free vs controlled evolution, a HUM solve, and the
//! Carleman weight profiles. The logic lives in [`Model`] and [`carleman_profile`]
//! so it can be tested natively; the `wasm_bindgen` layer only converts types.

use chb_control::carleman::{build_nu, s_floor, CarlemanWeights};
use chb_control::dynamics::{solve_linear_forward, ControlSignal, Trajectory};
use chb_control::harness::{Config, Setup};
use chb_control::hum::{CgOptions, Hum};
use chb_control::Error;
use wasm_bindgen::prelude::*;

/// One configured system plus the last computed control.
pub struct Model {
    setup: Setup,
    control: Option<ControlSignal>,
}

impl Model {
    pub fn new(n: usize, dt: f64, horizon: f64, phibar: f64) -> Result<Model, Error> {
        let mut cfg = Config::default();
        cfg.grid.n = n;
        cfg.time.dt = dt;
        cfg.time.horizon = horizon;
        cfg.steady.phibar = phibar;
        cfg.steady.allow_decoupled = true;
        cfg.validate()?;
        Ok(Model {
            setup: Setup::new(&cfg)?,
            control: None,
        })
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.setup.grid.nodes().to_vec()
    }

    fn run(&self, control: Option<&ControlSignal>) -> Result<Trajectory, Error> {
        let s = &self.setup;
        solve_linear_forward(&s.prop, &s.y0, control, None, s.steps)
    }

    /// `frames` evenly spaced snapshots, each `[w on all nodes, ψ on all nodes]`.
    pub fn frames(&self, controlled: bool, frames: usize) -> Result<Vec<f64>, Error> {
        let control = match (controlled, &self.control) {
            (false, _) => None,
            (true, Some(c)) => Some(c),
            (true, None) => return Err(Error::Contract("no control computed yet".into())),
        };
        let traj = self.run(control)?;
        let g = &self.setup.grid;
        let mut out = Vec::new();
        for k in snapshot_steps(self.setup.steps, frames) {
            let st = &traj.states[k];
            out.extend(g.extend_dirichlet(&st.w));
            out.extend_from_slice(&st.psi);
        }
        Ok(out)
    }

    /// Penalized HUM; returns `[‖y(T)‖, ‖y_free(T)‖, ‖h‖, CG iterations, optimality defect]`.
    pub fn solve(&mut self, epsilon: f64) -> Result<Vec<f64>, Error> {
        let s = &self.setup;
        let r = Hum::new(&s.prop, s.steps).solve_null_control(&s.y0, epsilon, &CgOptions::default())?;
        let out = vec![
            r.terminal_state.norm(&s.grid),
            r.free_terminal.norm(&s.grid),
            r.control_cost,
            r.cg_iterations as f64,
            r.optimality_defect(&s.grid),
        ];
        self.control = Some(r.control);
        Ok(out)
    }

    /// Control `h` at the snapshot times, one row of all nodes per frame.
    pub fn control_frames(&self, frames: usize) -> Result<Vec<f64>, Error> {
        let c = self
            .control
            .as_ref()
            .ok_or_else(|| Error::Contract("no control computed yet".into()))?;
        let last = c.steps() - 1;
        Ok(snapshot_steps(self.setup.steps, frames)
            .flat_map(|k| c.step(k.min(last)).to_vec())
            .collect())
    }
}

fn snapshot_steps(steps: usize, frames: usize) -> impl Iterator<Item = usize> {
    let frames = frames.max(2);
    (0..frames).map(move |i| (i * steps + (frames - 1) / 2) / (frames - 1))
}

/// Rows `[x, ν, ν', log(e^{−2sφ} ξ³)]` on `n + 1` nodes at time `t ∈ (0, T)`,
/// flattened. `s ≤ 0` selects the floor for `μ₀ = C = 1`.
pub fn carleman_profile(
    o0: (f64, f64),
    o: (f64, f64),
    lambda: f64,
    s: f64,
    t_frac: f64,
    horizon: f64,
    n: usize,
) -> Result<Vec<f64>, Error> {
    let nu = build_nu(o0, o)?;
    let (k, m) = (5, 4);
    let s = if s > 0.0 { s } else { s_floor(1.0, 1.0, m, horizon) };
    let w = CarlemanWeights::new(nu, lambda, s, k, m, horizon)?;
    let t = t_frac.clamp(1e-3, 1.0 - 1e-3) * horizon;
    let mut out = Vec::with_capacity(4 * (n + 1));
    for i in 0..=n {
        let x = i as f64 / n as f64;
        let d = nu.derivs(x);
        out.extend([x, d[0], d[1], w.log_factor(t, x, 3.0)?]);
    }
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    model: Model,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, dt: f64, horizon: f64, phibar: f64) -> Result<Demo, JsError> {
        Ok(Demo {
            model: Model::new(n, dt, horizon, phibar).map_err(js)?,
        })
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.model.nodes()
    }

    pub fn frames(&self, controlled: bool, frames: usize) -> Result<Vec<f64>, JsError> {
        self.model.frames(controlled, frames).map_err(js)
    }

    pub fn solve(&mut self, epsilon: f64) -> Result<Vec<f64>, JsError> {
        self.model.solve(epsilon).map_err(js)
    }

    pub fn control_frames(&self, frames: usize) -> Result<Vec<f64>, JsError> {
        self.model.control_frames(frames).map_err(js)
    }
}

#[wasm_bindgen(js_name = carlemanProfile)]
#[allow(clippy::too_many_arguments)]
pub fn carleman_profile_js(
    o0_a: f64,
    o0_b: f64,
    o_a: f64,
    o_b: f64,
    lambda: f64,
    s: f64,
    t_frac: f64,
    horizon: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    carleman_profile((o0_a, o0_b), (o_a, o_b), lambda, s, t_frac, horizon, n).map_err(js)
}
