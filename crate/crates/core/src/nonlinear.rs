//! Nonlinear terms and the fixed-point controller.
//!
//! ```text
//! N₁ = −w w_x − ψ_x ψ_xx + (4ψ³ + 12φ̄ψ² + 12φ̄²ψ − 4ψ) ψ_x
//! N₂ = −w ψ_x + (12ψ² + 24φ̄ψ) ψ_xx + (24ψ + 24φ̄) ψ_x²
//! ```
//!
//! The controller iterates `y^{j+1} = Λ(y^j)`: the sources `N(y^j)` are
//! factored against `ρ_F` and handed to the source-term solver, whose
//! controlled trajectory is the next iterate. At a fixed point the explicit
//! treatment of `N` in the forward scheme is reproduced exactly, so the closed
//! loop can be checked by an independent nonlinear simulation.

use crate::dynamics::{solve_nonlinear_forward, ControlSignal, CoupledState, Propagator, Sources, Trajectory};
use crate::error::{Error, Result};
use crate::mesh::{discrete_norms, Grid, Operators};
use crate::source_term::{solve_with_source, FactoredSource, IntervalRecord, SourceTermOptions, SourceWeights};
use crate::steady::SystemParams;

/// `(N₁, N₂)` at one time; `N₁` on interior nodes, `N₂` on all nodes.
pub fn eval_nonlinear(grid: &Grid, ops: &Operators, params: &SystemParams, w: &[f64], psi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pb = params.phibar;
    let wx = ops.d1_dir.apply(w);
    let px = ops.d1_neu.apply(psi);
    let pxx = ops.d2_neu.apply(psi);
    let n1 = (0..grid.n_dirichlet())
        .map(|r| {
            let i = r + 1;
            let p = psi[i];
            let poly = 4.0 * p * p * p + 12.0 * pb * p * p + 12.0 * pb * pb * p - 4.0 * p;
            -w[r] * wx[r] - px[i] * pxx[i] + poly * px[i]
        })
        .collect();
    let wf = grid.extend_dirichlet(w);
    let n2 = (0..grid.n_neumann())
        .map(|i| {
            let p = psi[i];
            -wf[i] * px[i] + (12.0 * p * p + 24.0 * pb * p) * pxx[i] + (24.0 * p + 24.0 * pb) * px[i] * px[i]
        })
        .collect();
    (n1, n2)
}

/// `N` along a trajectory, one source step per state `y_0 … y_{K−1}`.
pub fn nonlinear_sources(prop: &Propagator, traj: &Trajectory) -> Sources {
    let steps = traj.steps();
    let mut s = Sources {
        f1: Vec::with_capacity(steps),
        f2: Vec::with_capacity(steps),
    };
    for st in &traj.states[..steps] {
        let (a, b) = eval_nonlinear(prop.grid(), prop.ops(), prop.params(), &st.w, &st.psi);
        s.f1.push(a);
        s.f2.push(b);
    }
    s
}

/// `‖w‖_{H¹} + ‖ψ‖_{H²}` (full discrete norms).
pub fn state_norm(grid: &Grid, ops: &Operators, s: &CoupledState) -> f64 {
    let a = discrete_norms(grid, ops, &s.w).expect("shape checked");
    let b = discrete_norms(grid, ops, &s.psi).expect("shape checked");
    a.l2.hypot(a.h1_semi) + (b.l2 * b.l2 + b.h1_semi * b.h1_semi + b.h2_semi * b.h2_semi).sqrt()
}

/// `(‖N₁‖_{L²}, ‖N₂‖_{L²})`.
pub fn nonlinear_norms(grid: &Grid, ops: &Operators, params: &SystemParams, s: &CoupledState) -> (f64, f64) {
    let (a, b) = eval_nonlinear(grid, ops, params, &s.w, &s.psi);
    (grid.l2(&a), grid.l2(&b))
}

/// `‖N(y)‖ / (‖y‖⁴ + ‖y‖³ + ‖y‖²)`; zero for `y = 0`.
pub fn bound_constant(grid: &Grid, ops: &Operators, params: &SystemParams, s: &CoupledState) -> f64 {
    let y = state_norm(grid, ops, s);
    if y == 0.0 {
        return 0.0;
    }
    let (a, b) = nonlinear_norms(grid, ops, params, s);
    (a + b) / (y.powi(4) + y.powi(3) + y.powi(2))
}

/// `‖N(y₁) − N(y₂)‖ / (Σ_j (‖y_j‖³ + ‖y_j‖² + ‖y_j‖) · ‖y₁ − y₂‖)`.
pub fn lipschitz_constant(grid: &Grid, ops: &Operators, params: &SystemParams, a: &CoupledState, b: &CoupledState) -> f64 {
    let d = state_norm(grid, ops, &a.axpy(-1.0, b));
    if d == 0.0 {
        return 0.0;
    }
    let (a1, a2) = eval_nonlinear(grid, ops, params, &a.w, &a.psi);
    let (b1, b2) = eval_nonlinear(grid, ops, params, &b.w, &b.psi);
    let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u - v).collect() };
    let num = grid.l2(&diff(&a1, &b1)) + grid.l2(&diff(&a2, &b2));
    let poly = |y: f64| y.powi(3) + y.powi(2) + y;
    num / ((poly(state_norm(grid, ops, a)) + poly(state_norm(grid, ops, b))) * d)
}

/// `(‖N₁(y)‖/‖N₁(y/2)‖, ‖N₂(y)‖/‖N₂(y/2)‖)`: close to 4 for small `y`.
pub fn halving_ratios(grid: &Grid, ops: &Operators, params: &SystemParams, s: &CoupledState) -> (f64, f64) {
    let (a, b) = nonlinear_norms(grid, ops, params, s);
    let (c, d) = nonlinear_norms(grid, ops, params, &s.scaled(0.5));
    (a / c, b / d)
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    /// Absolute tolerance on the trajectory-norm distance of successive iterates.
    pub tol: f64,
    pub maxit: usize,
    /// Admissible radius `μ` for `‖y₀‖_{L²×L²}`.
    pub radius: f64,
    pub source: SourceTermOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-9,
            maxit: 30,
            radius: 5e-2,
            source: SourceTermOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    /// `‖y^{j+1} − y^j‖` in the trajectory norm.
    pub distance: f64,
    /// `d_j / d_{j−1}`; NaN for the first iterate.
    pub contraction_ratio: f64,
    pub terminal_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub control: ControlSignal,
    pub trajectory: Trajectory,
    pub history: Vec<IterateRecord>,
    /// Schedule records of the final application of the map.
    pub schedule: Vec<IntervalRecord>,
}

impl FixedPointResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Largest recorded contraction ratio (0 with fewer than two iterates).
    pub fn max_contraction_ratio(&self) -> f64 {
        self.history
            .iter()
            .map(|r| r.contraction_ratio)
            .filter(|r| r.is_finite())
            .fold(0.0, f64::max)
    }
}

/// One application of the map: controls the linear system with sources `N(y^j)`.
pub fn apply_map(
    prop: &Propagator,
    weights: &SourceWeights,
    y0: &CoupledState,
    iterate: &Trajectory,
    opts: &SourceTermOptions,
) -> Result<(ControlSignal, Trajectory, Vec<IntervalRecord>)> {
    let steps = iterate.steps();
    let n = nonlinear_sources(prop, iterate);
    let factored = FactoredSource::factor(weights, prop.grid(), prop.dt(), &n);
    let res = solve_with_source(prop, y0, &factored, weights, steps, opts)?;
    Ok((res.control, res.trajectory, res.records))
}

pub fn fixed_point_control(
    prop: &Propagator,
    weights: &SourceWeights,
    y0: &CoupledState,
    steps: usize,
    opts: &FixedPointOptions,
) -> Result<FixedPointResult> {
    let grid = prop.grid();
    let ops = prop.ops();
    y0.check_shape(grid)?;
    let size = y0.norm(grid);
    if size > opts.radius {
        return Err(Error::SmallnessViolated(format!(
            "‖y0‖ = {size:e} exceeds the fixed-point radius {:e}",
            opts.radius
        )));
    }
    let zero_traj = || Trajectory {
        dt: prop.dt(),
        states: (0..=steps)
            .map(|k| {
                let mut s = CoupledState::zeros(grid);
                s.t = k as f64 * prop.dt();
                s
            })
            .collect(),
    };
    if size == 0.0 {
        return Ok(FixedPointResult {
            control: ControlSignal::zeros(grid, steps),
            trajectory: zero_traj(),
            history: Vec::new(),
            schedule: Vec::new(),
        });
    }

    let mut current = zero_traj();
    let mut history: Vec<IterateRecord> = Vec::new();
    let mut growing = 0;
    for iter in 1..=opts.maxit {
        let (control, next, schedule) = apply_map(prop, weights, y0, &current, &opts.source)?;
        let distance = next.difference(&current).norm(grid, ops);
        let ratio = history
            .last()
            .map(|r| distance / r.distance)
            .unwrap_or(f64::NAN);
        history.push(IterateRecord {
            iter,
            distance,
            contraction_ratio: ratio,
            terminal_norm: next.terminal().norm(grid),
        });
        log::debug!("fixed point iterate {iter}: distance {distance:e}, ratio {ratio:e}");
        if distance <= opts.tol {
            return Ok(FixedPointResult {
                control,
                trajectory: next,
                history,
                schedule,
            });
        }
        growing = if ratio >= 1.0 { growing + 1 } else { 0 };
        if growing >= 3 {
            return Err(Error::OutsideContraction { consecutive: growing });
        }
        current = next;
    }
    Err(Error::NonConvergence {
        iterations: opts.maxit,
        distance: history.last().map(|r| r.distance).unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub terminal_norm: f64,
    pub trajectory: Trajectory,
    /// Trajectory-norm gap to the reference (the fixed-point iterate), if given.
    pub gap: Option<f64>,
}

/// Re-simulates the full nonlinear system under `control`.
pub fn verify_closed_loop(
    prop: &Propagator,
    y0: &CoupledState,
    control: &ControlSignal,
    reference: Option<&Trajectory>,
) -> Result<ClosedLoop> {
    let traj = solve_nonlinear_forward(prop, y0, Some(control), control.steps())?;
    let gap = reference.map(|r| traj.difference(r).norm(prop.grid(), prop.ops()));
    Ok(ClosedLoop {
        terminal_norm: traj.terminal().norm(prop.grid()),
        trajectory: traj,
        gap,
    })
}
