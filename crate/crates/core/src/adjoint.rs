//! Backward solves with the exact transpose of the forward one-step map.
//!
//! With `S = M_impl⁻¹ M_expl` and forcing injected through `M_impl⁻¹`, the
//! adjoint recursion in the trapezoid-weighted inner product is
//!
//! ```text
//! ẑ_k = M_impl⁻* z_{k+1}          (observation paired with the step-k forcing)
//! z_k = M_expl* ẑ_k  [+ dt M_impl⁻* r_k],   M_expl* ẑ_k = z_{k+1} + dt A* ẑ_k
//! ```
//!
//! so that `⟨y_K, z_K⟩ − ⟨y_0, z_0⟩ = Σ_k dt ⟨g_k, ẑ_k⟩` holds to round-off
//! when `r = 0`. For `θ = 1`, `ẑ_k = z_k`.

use crate::dynamics::{ControlSignal, CoupledState, Propagator, Sources, Trajectory};
use crate::error::{Error, Result};

/// Backward trajectory of `(σ, v)` (stored in the `(w, psi)` slots).
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    /// `z_0 … z_K`, ascending in time.
    pub states: Vec<CoupledState>,
    /// `ẑ_0 … ẑ_{K−1}`: the fields paired with the forcing of each forward step.
    pub observed: Vec<CoupledState>,
}

impl AdjointTrajectory {
    pub fn initial(&self) -> &CoupledState {
        &self.states[0]
    }

    pub fn as_trajectory(&self, dt: f64) -> Trajectory {
        Trajectory {
            dt,
            states: self.states.clone(),
        }
    }
}

/// Solves the adjoint system backward from `z_T` over `steps` steps.
///
/// `source`, if present, is the per-step forcing `r_k` of `−z_t = A* z + r`.
pub fn solve_adjoint(
    prop: &Propagator,
    z_t: &CoupledState,
    steps: usize,
    source: Option<&Sources>,
) -> Result<AdjointTrajectory> {
    z_t.check_shape(prop.grid())?;
    if let Some(s) = source {
        if s.steps() != steps {
            return Err(Error::Contract(format!(
                "adjoint source has {} steps, solve has {steps}",
                s.steps()
            )));
        }
    }
    let dt = prop.dt();
    let t_end = z_t.t;
    let (states, observed) = backward(prop, prop.pack(z_t), steps, |k| {
        source.map(|s| prop.forcing(Some(&s.f1[k]), Some(&s.f2[k]), None))
    })?;
    let time = |k: usize| t_end - (steps - k) as f64 * dt;
    Ok(AdjointTrajectory {
        states: states
            .iter()
            .enumerate()
            .map(|(k, z)| prop.unpack(z, time(k)))
            .collect(),
        observed: observed
            .iter()
            .enumerate()
            .map(|(k, z)| prop.unpack(z, time(k)))
            .collect(),
    })
}

/// Packed backward recursion; returns `(z_0..=z_K, ẑ_0..ẑ_{K−1})`.
/// Adjoint states on `0..=steps` and their control-region observations.
type Sweep = (Vec<Vec<f64>>, Vec<Vec<f64>>);

pub(crate) fn backward(
    prop: &Propagator,
    z_t: Vec<f64>,
    steps: usize,
    mut source: impl FnMut(usize) -> Option<Vec<f64>>,
) -> Result<Sweep> {
    let dt = prop.dt();
    let mut states = vec![Vec::new(); steps + 1];
    let mut observed = vec![Vec::new(); steps];
    states[steps] = z_t;
    for k in (0..steps).rev() {
        let (mut z, zh) = prop.adjoint_step(&states[k + 1]);
        if let Some(r) = source(k) {
            let extra = prop.adjoint_solve(&r);
            z.iter_mut().zip(&extra).for_each(|(a, e)| *a += dt * e);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { step: k });
        }
        observed[k] = zh;
        states[k] = z;
    }
    Ok((states, observed))
}

/// Relative defect of the discrete duality identity
/// `⟨y(T), z_T⟩ − ⟨y₀, z(0)⟩ = Σ dt (⟨χ_O h_k, v̂_k⟩ + ⟨f₁ₖ, σ̂_k⟩ + ⟨f₂ₖ, v̂_k⟩)`.
///
/// The absolute defect is divided by the sum of magnitudes of all pairings;
/// all-zero inputs give 0.
pub fn duality_defect(
    prop: &Propagator,
    y0: &CoupledState,
    z_t: &CoupledState,
    control: Option<&ControlSignal>,
    sources: Option<&Sources>,
    steps: usize,
) -> Result<f64> {
    let grid = prop.grid();
    let fwd = crate::dynamics::solve_linear_forward(prop, y0, control, sources, steps)?;
    let adj = solve_adjoint(prop, z_t, steps, None)?;
    let end = fwd.terminal().inner(grid, z_t);
    let start = y0.inner(grid, adj.initial());
    let mut pairing = 0.0;
    let mut scale = end.abs() + start.abs();
    for k in 0..steps {
        let obs = &adj.observed[k];
        let mut term = 0.0;
        if let Some(h) = control {
            term += grid.inner(h.step(k), &obs.psi);
        }
        if let Some(s) = sources {
            term += grid.inner(&s.f1[k], &obs.w) + grid.inner(&s.f2[k], &obs.psi);
        }
        pairing += prop.dt() * term;
        scale += prop.dt() * term.abs();
    }
    let defect = (end - start - pairing).abs();
    Ok(if scale == 0.0 { defect } else { defect / scale })
}
