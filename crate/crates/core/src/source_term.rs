//! Controls for the linearized system with sources decaying like `ρ_F`.
//!
//! The horizon is split at `T_k = T − T/q^k`. On each `(T_k, T_{k+1})` the
//! state reached at `T_k` is steered to rest by penalized HUM while the
//! source-only response from rest produces the next remainder `a_{k+1}`. After
//! at most `K_max` intervals (or once `‖a_k‖` falls below the tail
//! tolerance) one last HUM solve on `(T_K, T)`, with the remaining sources
//! folded into its free state, cleans up.
//!
//! The weights
//!
//! ```text
//! ρ₀(t)  = exp(−p M / ((q−1)^m (T−t)^m))
//! ρ_F(t) = exp(−(1+p) q^{2m} M / ((q−1)^m (T−t)^m))
//! ```
//!
//! underflow for every admissible parameter choice of interest, so they are
//! only ever handled through their logarithms.

use crate::dynamics::{solve_linear_forward, ControlSignal, CoupledState, Propagator, Sources, Trajectory};
use crate::error::{Error, Result};
use crate::hum::{CgOptions, Hum};
use crate::mesh::{discrete_norms, Grid, Operators};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceWeights {
    pub p: f64,
    pub q: f64,
    /// Control-cost constant `M`.
    pub big_m: f64,
    pub m: u32,
    pub horizon: f64,
}

impl SourceWeights {
    pub fn new(p: f64, q: f64, big_m: f64, m: u32, horizon: f64) -> Result<Self> {
        if m <= 3 {
            return Err(Error::Config(format!("m must be an integer > 3, got {m}")));
        }
        if !(big_m > 0.0) || !(horizon > 0.0) {
            return Err(Error::Config(format!(
                "M and T must be positive (M = {big_m}, T = {horizon})"
            )));
        }
        let q_max = q_upper_bound(m);
        if !(q > 1.0 && q < q_max) {
            return Err(Error::Config(format!(
                "q = {q} violates 1 < q < 2^(1/(2m)) = {q_max:.9} for m = {m}"
            )));
        }
        let p_min = p_lower_bound(q, m);
        if !(p > p_min) {
            return Err(Error::Config(format!(
                "p = {p} violates p > q^(2m)/(2 - q^(2m)) = {p_min:.9}"
            )));
        }
        Ok(SourceWeights {
            p,
            q,
            big_m,
            m,
            horizon,
        })
    }

    fn q2m(&self) -> f64 {
        self.q.powi(2 * self.m as i32)
    }

    /// `(q−1)^m (T−t)^m`; `time_to_go = T − t`.
    fn denom(&self, time_to_go: f64) -> f64 {
        ((self.q - 1.0) * time_to_go).powi(self.m as i32)
    }

    /// `log ρ₀` as a function of the remaining time `T − t`.
    pub fn log_rho0_remaining(&self, time_to_go: f64) -> f64 {
        if time_to_go <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -self.p * self.big_m / self.denom(time_to_go)
    }

    pub fn log_rho_f_remaining(&self, time_to_go: f64) -> f64 {
        if time_to_go <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -(1.0 + self.p) * self.q2m() * self.big_m / self.denom(time_to_go)
    }

    pub fn log_rho0(&self, t: f64) -> f64 {
        self.log_rho0_remaining(self.horizon - t)
    }

    pub fn log_rho_f(&self, t: f64) -> f64 {
        self.log_rho_f_remaining(self.horizon - t)
    }

    pub fn rho0(&self, t: f64) -> f64 {
        self.log_rho0(t).exp()
    }

    pub fn rho_f(&self, t: f64) -> f64 {
        self.log_rho_f(t).exp()
    }

    /// `log(ρ₀² / ρ_F)`; non-positive for admissible `(p, q)`.
    pub fn log_ratio_rho0_sq_over_rho_f(&self, t: f64) -> f64 {
        let ttg = self.horizon - t;
        if ttg <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.q2m() + self.p * (self.q2m() - 2.0)) * self.big_m / self.denom(ttg)
    }
}

pub fn q_upper_bound(m: u32) -> f64 {
    2f64.powf(1.0 / (2.0 * m as f64))
}

pub fn p_lower_bound(q: f64, m: u32) -> f64 {
    let q2m = q.powi(2 * m as i32);
    q2m / (2.0 - q2m)
}

/// Geometric partition `T_k = T − T/q^k`, `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub horizon: f64,
    pub q: f64,
    pub times: Vec<f64>,
}

impl Schedule {
    pub fn new(horizon: f64, q: f64, k_max: usize) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::Config(format!("K_max must be at least 2, got {k_max}")));
        }
        if !(q > 1.0) || !(horizon > 0.0) {
            return Err(Error::Config(format!("need q > 1 and T > 0 (q = {q}, T = {horizon})")));
        }
        let times = (0..=k_max)
            .map(|k| horizon - horizon / q.powi(k as i32))
            .collect();
        Ok(Schedule { horizon, q, times })
    }

    /// `T − T_k = T/q^k`, without cancellation.
    pub fn remaining(&self, k: usize) -> f64 {
        self.horizon / self.q.powi(k as i32)
    }

    /// `T_{k+1} − T_k = T (q−1)/q^{k+1}`.
    pub fn interval_length(&self, k: usize) -> f64 {
        self.horizon * (self.q - 1.0) / self.q.powi(k as i32 + 1)
    }

    /// Relative defects of `log ρ₀(T_{k+1}) = log ρ_F(T_{k−1}) + M/(T_{k+1} − T_k)^m`
    /// for `k = 1..k_max−1`.
    pub fn identity_defects(&self, w: &SourceWeights) -> Vec<f64> {
        (1..self.times.len() - 1)
            .map(|k| {
                let lhs = w.log_rho0_remaining(self.remaining(k + 1));
                let rhs = w.log_rho_f_remaining(self.remaining(k - 1))
                    + w.big_m / self.interval_length(k).powi(w.m as i32);
                (lhs - rhs).abs() / lhs.abs()
            })
            .collect()
    }
}

/// Sources in factored form `f_k = ρ_F(t_k) · g_k`, stored as
/// `f_k = exp(log_scale_k) · profile_k`.
///
/// `g_k = exp(log_scale_k − log ρ_F(t_k)) · profile_k` stays representable
/// even where `ρ_F` underflows, and `f` is rebuilt without passing through
/// the huge exponents of the weight.
#[derive(Debug, Clone)]
pub struct FactoredSource {
    dt: f64,
    log_rho_f: Vec<f64>,
    log_scale: Vec<f64>,
    g1: Vec<Vec<f64>>,
    g2: Vec<Vec<f64>>,
}

impl FactoredSource {
    /// Bounded profiles `g` given per step (sampled at the left endpoint `t_k`).
    pub fn from_profiles(weights: &SourceWeights, dt: f64, g1: Vec<Vec<f64>>, g2: Vec<Vec<f64>>) -> Result<Self> {
        if g1.len() != g2.len() {
            return Err(Error::Contract("g1 and g2 must have the same number of steps".into()));
        }
        let log_rho_f: Vec<f64> = (0..g1.len()).map(|k| weights.log_rho_f(k as f64 * dt)).collect();
        Ok(FactoredSource {
            dt,
            log_scale: log_rho_f.clone(),
            log_rho_f,
            g1,
            g2,
        })
    }

    /// Profiles from functions of `(t, x)`.
    pub fn from_fns(
        weights: &SourceWeights,
        grid: &Grid,
        dt: f64,
        steps: usize,
        g1: impl Fn(f64, f64) -> f64,
        g2: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let g1 = (0..steps)
            .map(|k| grid.sample_interior(|x| g1(k as f64 * dt, x)))
            .collect();
        let g2 = (0..steps)
            .map(|k| grid.sample(|x| g2(k as f64 * dt, x)))
            .collect();
        Self::from_profiles(weights, dt, g1, g2)
    }

    pub fn zeros(weights: &SourceWeights, grid: &Grid, dt: f64, steps: usize) -> Self {
        Self::from_profiles(
            weights,
            dt,
            vec![vec![0.0; grid.n_dirichlet()]; steps],
            vec![vec![0.0; grid.n_neumann()]; steps],
        )
        .expect("shapes agree")
    }

    /// Factors arbitrary sources against `ρ_F` in log space: each step keeps
    /// the unit profile `f_k/‖f_k‖` and `log‖f_k‖`, so that
    /// `log‖g_k‖ = log‖f_k‖ − log ρ_F(t_k)`.
    pub fn factor(weights: &SourceWeights, grid: &Grid, dt: f64, sources: &Sources) -> Self {
        let steps = sources.steps();
        let mut out = FactoredSource {
            dt,
            log_rho_f: Vec::with_capacity(steps),
            log_scale: Vec::with_capacity(steps),
            g1: Vec::with_capacity(steps),
            g2: Vec::with_capacity(steps),
        };
        for k in 0..steps {
            let lr = weights.log_rho_f(k as f64 * dt);
            let (f1, f2) = (&sources.f1[k], &sources.f2[k]);
            let nrm = (grid.inner(f1, f1) + grid.inner(f2, f2)).sqrt();
            out.log_rho_f.push(lr);
            if nrm == 0.0 {
                out.log_scale.push(f64::NEG_INFINITY);
                out.g1.push(vec![0.0; f1.len()]);
                out.g2.push(vec![0.0; f2.len()]);
            } else {
                out.log_scale.push(nrm.ln());
                out.g1.push(f1.iter().map(|v| v / nrm).collect());
                out.g2.push(f2.iter().map(|v| v / nrm).collect());
            }
        }
        out
    }

    pub fn steps(&self) -> usize {
        self.g1.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Rejects sources factored against different weights or time step.
    pub fn check_weights(&self, weights: &SourceWeights, dt: f64) -> Result<()> {
        if (self.dt - dt).abs() > 1e-15 * dt {
            return Err(Error::Contract(format!("sources sampled with dt = {}, solver uses {dt}", self.dt)));
        }
        for (k, lr) in self.log_rho_f.iter().enumerate() {
            let expect = weights.log_rho_f(k as f64 * dt);
            if (lr - expect).abs() > 1e-12 * expect.abs().max(1.0) {
                return Err(Error::Contract(format!(
                    "source step {k} is not factored against rho_F of these weights"
                )));
            }
        }
        Ok(())
    }

    /// The sources `f = ρ_F g` in linear scale (underflow flushes to zero).
    pub fn to_sources(&self) -> Sources {
        let scale = |k: usize| self.log_scale[k].exp();
        Sources {
            f1: self
                .g1
                .iter()
                .enumerate()
                .map(|(k, g)| g.iter().map(|v| scale(k) * v).collect())
                .collect(),
            f2: self
                .g2
                .iter()
                .enumerate()
                .map(|(k, g)| g.iter().map(|v| scale(k) * v).collect())
                .collect(),
        }
    }

    /// `log ‖f/ρ_F‖_{L¹(0,T; L²×L²)} = log Σ_k dt ‖g_k‖`.
    pub fn log_f_norm(&self, grid: &Grid) -> f64 {
        let terms: Vec<f64> = (0..self.steps())
            .map(|k| {
                let p = (grid.inner(&self.g1[k], &self.g1[k]) + grid.inner(&self.g2[k], &self.g2[k])).sqrt();
                self.dt.ln() + (self.log_scale[k] - self.log_rho_f[k]) + p.ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// `max_k ‖g_k‖`, possibly infinite.
    pub fn max_g_norm(&self, grid: &Grid) -> f64 {
        (0..self.steps())
            .map(|k| {
                let p = (grid.inner(&self.g1[k], &self.g1[k]) + grid.inner(&self.g2[k], &self.g2[k])).sqrt();
                if p == 0.0 {
                    0.0
                } else {
                    (self.log_scale[k] - self.log_rho_f[k]).exp() * p
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `log Σ exp(xᵢ)`, `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    log_sum_exp(&[a, b])
}

#[derive(Debug, Clone, Copy)]
pub struct SourceTermOptions {
    pub epsilon: f64,
    pub cg: CgOptions,
    pub k_max: usize,
    pub tail_tol: f64,
}

impl Default for SourceTermOptions {
    fn default() -> Self {
        // tighter than plain HUM: each interval leaves an ε-sized residual
        SourceTermOptions {
            epsilon: 1e-8,
            cg: CgOptions::default(),
            k_max: 12,
            tail_tol: 1e-8,
        }
    }
}

/// One row of the schedule record; the last row is the clean-up interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRecord {
    pub k: usize,
    /// Start time on the time grid (the nearest step to `T_k`).
    pub t_start: f64,
    pub start_step: usize,
    pub end_step: usize,
    /// `‖a_k‖`: remainder produced by the sources on the previous interval
    /// (`a₀ = y₀`).
    pub a_norm: f64,
    /// Norm of the state actually steered on this interval.
    pub state_norm: f64,
    pub h_norm: f64,
    pub f_l1_norm: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SourceTermResult {
    pub control: ControlSignal,
    /// Single forward solve from `y₀` with the concatenated control and the sources.
    pub trajectory: Trajectory,
    pub records: Vec<IntervalRecord>,
    /// At each stitch step, `‖piecewise − global‖ / scale` with
    /// `scale = ‖y₀‖ + ‖f‖_{L¹(L²)}` (absolute when the scale vanishes).
    pub stitch_jumps: Vec<f64>,
    pub terminal_norm: f64,
    pub schedule: Schedule,
}

/// Piecewise control for `y₀` and factored sources over the propagator's
/// time grid with `steps` steps (horizon `weights.horizon`).
pub fn solve_with_source(
    prop: &Propagator,
    y0: &CoupledState,
    sources: &FactoredSource,
    weights: &SourceWeights,
    steps: usize,
    opts: &SourceTermOptions,
) -> Result<SourceTermResult> {
    let grid = prop.grid();
    let dt = prop.dt();
    if ((steps as f64) * dt - weights.horizon).abs() > 1e-9 * weights.horizon {
        return Err(Error::Contract(format!(
            "{steps} steps of {dt} do not cover the weights' horizon {}",
            weights.horizon
        )));
    }
    if sources.steps() != steps {
        return Err(Error::Contract(format!(
            "sources have {} steps, solve has {steps}",
            sources.steps()
        )));
    }
    sources.check_weights(weights, dt)?;
    y0.check_shape(grid)?;

    let schedule = Schedule::new(weights.horizon, weights.q, opts.k_max)?;
    let f = sources.to_sources();
    let scale = y0.norm(grid) + f.l1_l2_norm(grid, dt);

    // stitch steps on the time grid, strictly increasing and short of the end
    let mut stitches = vec![0usize];
    for &tk in &schedule.times[1..] {
        let s = (tk / dt).round() as usize;
        if s <= *stitches.last().unwrap() || s >= steps {
            break;
        }
        stitches.push(s);
    }

    let mut control = ControlSignal::zeros(grid, steps);
    let mut piecewise: Vec<CoupledState> = Vec::with_capacity(steps + 1);
    let mut records = Vec::new();
    let mut y = y0.clone();
    let mut a_norm = y0.norm(grid);
    let mut k = 0;
    while k + 1 < stitches.len() {
        let (s0, s1) = (stitches[k], stitches[k + 1]);
        let n_steps = s1 - s0;
        let mut y_start = y.clone();
        y_start.t = 0.0;
        let hum = Hum::new(prop, n_steps).solve_null_control(&y_start, opts.epsilon, &opts.cg)?;
        let f_k = f.slice(s0..s1);
        let controlled = solve_linear_forward(prop, &y_start, Some(&hum.control), None, n_steps)?;
        let source_only = solve_linear_forward(prop, &CoupledState::zeros(grid), None, Some(&f_k), n_steps)?;
        for (i, (c, s)) in controlled.states.iter().zip(&source_only.states).enumerate() {
            if i < n_steps {
                let mut st = c.axpy(1.0, s);
                st.t = (s0 + i) as f64 * dt;
                piecewise.push(st);
            }
        }
        control.splice(s0, &hum.control);
        records.push(IntervalRecord {
            k,
            t_start: s0 as f64 * dt,
            start_step: s0,
            end_step: s1,
            a_norm,
            state_norm: y.norm(grid),
            h_norm: hum.control_cost,
            f_l1_norm: f_k.l1_l2_norm(grid, dt),
            cg_iterations: hum.cg_iterations,
        });
        let a_next = source_only.terminal();
        a_norm = a_next.norm(grid);
        y = controlled.terminal().axpy(1.0, a_next);
        k += 1;
        if a_norm <= opts.tail_tol {
            break;
        }
    }

    // clean-up on the remaining horizon, sources included in the free state
    let s0 = stitches[k];
    let n_steps = steps - s0;
    let mut y_start = y.clone();
    y_start.t = 0.0;
    let f_tail = f.slice(s0..steps);
    let hum = Hum::new(prop, n_steps).solve_with_sources(&y_start, Some(&f_tail), opts.epsilon, &opts.cg)?;
    let tail = solve_linear_forward(prop, &y_start, Some(&hum.control), Some(&f_tail), n_steps)?;
    for (i, st) in tail.states.iter().enumerate() {
        let mut st = st.clone();
        st.t = (s0 + i) as f64 * dt;
        piecewise.push(st);
    }
    control.splice(s0, &hum.control);
    records.push(IntervalRecord {
        k,
        t_start: s0 as f64 * dt,
        start_step: s0,
        end_step: steps,
        a_norm,
        state_norm: y.norm(grid),
        h_norm: hum.control_cost,
        f_l1_norm: f_tail.l1_l2_norm(grid, dt),
        cg_iterations: hum.cg_iterations,
    });

    let trajectory = solve_linear_forward(prop, y0, Some(&control), Some(&f), steps)?;
    let denom = if scale > 0.0 { scale } else { 1.0 };
    let stitch_jumps = records
        .iter()
        .map(|r| r.start_step)
        .chain(std::iter::once(steps))
        .map(|s| piecewise[s].axpy(-1.0, &trajectory.states[s]).norm(grid) / denom)
        .collect();
    Ok(SourceTermResult {
        terminal_norm: trajectory.terminal().norm(grid),
        control,
        trajectory,
        records,
        stitch_jumps,
        schedule,
    })
}

/// Logarithms of the weighted norms `‖y/ρ₀‖_Y`, `‖h/ρ₀‖_V`, `‖f/ρ_F‖_F`.
///
/// Time sums run over `t_k ∈ [0, T − dt]`; the terminal node, where the
/// weights vanish, is reported separately as `terminal_norm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNorms {
    pub log_y: f64,
    pub log_v: f64,
    pub log_f: f64,
    pub terminal_norm: f64,
}

impl WeightedNorms {
    /// Linear-scale values; `+∞` where the logarithm exceeds the `f64` range.
    pub fn values(&self) -> (f64, f64, f64) {
        (self.log_y.exp(), self.log_v.exp(), self.log_f.exp())
    }
}

pub fn weighted_norms(
    grid: &Grid,
    ops: &Operators,
    trajectory: &Trajectory,
    control: &ControlSignal,
    sources: &FactoredSource,
    weights: &SourceWeights,
) -> Result<WeightedNorms> {
    let dt = trajectory.dt;
    let steps = trajectory.steps();
    let ldt = dt.ln();
    let mut sup_w = f64::NEG_INFINITY;
    let mut sup_p = f64::NEG_INFINITY;
    let mut int_w = Vec::with_capacity(steps);
    let mut int_p = Vec::with_capacity(steps);
    let mut int_h = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let lr = weights.log_rho0(t);
        let s = &trajectory.states[k];
        let nw = discrete_norms(grid, ops, &s.w)?;
        let np = discrete_norms(grid, ops, &s.psi)?;
        sup_w = sup_w.max(nw.l2.ln() - lr);
        sup_p = sup_p.max(np.l2.ln() - lr);
        int_w.push(ldt + 2.0 * (nw.h1_semi.ln() - lr));
        int_p.push(ldt + 2.0 * (np.h2_1().ln() - lr));
        let h = control.step(k);
        int_h.push(ldt + 2.0 * (grid.l2(h).ln() - lr));
    }
    let log_y = log_sum_exp(&[
        sup_w,
        0.5 * log_sum_exp(&int_w),
        sup_p,
        0.5 * log_sum_exp(&int_p),
    ]);
    let log_v = 0.5 * log_sum_exp(&int_h);
    let log_f = sources.log_f_norm(grid);
    for (name, v) in [("Y", log_y), ("V", log_v), ("F", log_f)] {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::UnboundedWeightedNorm(format!("log of the {name}-norm is {v}")));
        }
    }
    Ok(WeightedNorms {
        log_y,
        log_v,
        log_f: log_add_exp(log_f, f64::NEG_INFINITY),
        terminal_norm: trajectory.terminal().norm(grid),
    })
}
