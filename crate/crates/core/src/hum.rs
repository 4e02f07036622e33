//! Penalized HUM: null-control synthesis by conjugate gradient on the
//! controllability Gramian, plus observability and control-cost probes.
//!
//! The Gramian `Λ z_T` is the terminal state reached from rest under the
//! control `h = χ_O v̂` read off the adjoint solution started at `z_T`. Because
//! the adjoint is the exact discrete transpose, `Λ` is symmetric positive
//! semidefinite in the trapezoid inner product and
//! `⟨Λ z, z⟩ = Σ dt ‖χ_O v̂_k‖²`.
//!
//! `solve_null_control` minimizes
//! `J_ε(z) = ½ Σ dt ‖χ_O v̂‖² + (ε/2)‖z‖² + ⟨z(0), y₀⟩`,
//! i.e. solves `(Λ + εI) z = −F_T y₀`. At the optimum `y(T) = −ε z`.

use crate::adjoint::backward;
use crate::dynamics::{solve_linear_forward, ControlSignal, CoupledState, Propagator, Sources};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target.
    pub tol: f64,
    pub maxit: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            maxit: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumResult {
    pub epsilon: f64,
    pub z_t_opt: CoupledState,
    pub control: ControlSignal,
    /// Re-simulated terminal state under `control`.
    pub terminal_state: CoupledState,
    /// Terminal state without control.
    pub free_terminal: CoupledState,
    pub cg_iterations: usize,
    /// True relative residual `‖(Λ + ε) z + F_T y₀‖ / ‖F_T y₀‖`.
    pub cg_residual: f64,
    /// `‖h‖_{L²(0,T; L²(O))}`.
    pub control_cost: f64,
}

impl HumResult {
    /// `‖y(T) + ε z_T‖ / ‖ε z_T‖`; zero when both vanish.
    pub fn optimality_defect(&self, grid: &crate::mesh::Grid) -> f64 {
        let ez = self.z_t_opt.scaled(self.epsilon);
        let num = self.terminal_state.axpy(1.0, &ez).norm(grid);
        let den = ez.norm(grid);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// HUM machinery on `steps` steps of one propagator.
#[derive(Debug, Clone, Copy)]
pub struct Hum<'a> {
    prop: &'a Propagator,
    steps: usize,
}

impl<'a> Hum<'a> {
    pub fn new(prop: &'a Propagator, steps: usize) -> Self {
        Hum { prop, steps }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.prop.dt()
    }

    /// Masked observations `χ_O v̂_k` and `z(0)` for packed terminal data.
    fn observe(&self, z: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (mut states, observed) = backward(self.prop, z.to_vec(), self.steps, |_| None)?;
        let h = observed.iter().map(|o| self.prop.masked_psi(o)).collect();
        Ok((h, std::mem::take(&mut states[0])))
    }

    fn terminal_from_rest(&self, h: &[Vec<f64>]) -> Vec<f64> {
        let mut y = vec![0.0; self.prop.dim()];
        for hk in h {
            let g = self.prop.forcing(None, None, Some(hk));
            y = self.prop.step(&y, Some(&g));
        }
        y
    }

    fn gramian_packed(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (h, _) = self.observe(z)?;
        Ok(self.terminal_from_rest(&h))
    }

    fn control_energy(&self, h: &[Vec<f64>]) -> f64 {
        let g = self.prop.grid();
        h.iter().map(|v| self.prop.dt() * g.inner(v, v)).sum()
    }

    /// `Λ z_T`.
    pub fn gramian_apply(&self, z_t: &CoupledState) -> Result<CoupledState> {
        z_t.check_shape(self.prop.grid())?;
        let y = self.gramian_packed(&self.prop.pack(z_t))?;
        Ok(self.prop.unpack(&y, self.horizon()))
    }

    /// `(⟨Λ z, z⟩, Σ dt ‖χ_O v̂‖²)`: two evaluations of the same quantity.
    pub fn gramian_forms(&self, z_t: &CoupledState) -> Result<(f64, f64)> {
        let z = self.prop.pack(z_t);
        let (h, _) = self.observe(&z)?;
        let lz = self.terminal_from_rest(&h);
        Ok((self.prop.inner(&lz, &z), self.control_energy(&h)))
    }

    /// Uncontrolled terminal state (sources included when given).
    pub fn free_terminal(&self, y0: &CoupledState, sources: Option<&Sources>) -> Result<CoupledState> {
        Ok(solve_linear_forward(self.prop, y0, None, sources, self.steps)?
            .terminal()
            .clone())
    }

    /// `J_ε(z)`; the pairing `⟨z(0), y₀⟩` is computed from the adjoint directly.
    pub fn functional(&self, z_t: &CoupledState, y0: &CoupledState, epsilon: f64) -> Result<f64> {
        let g = self.prop.grid();
        let (h, z0) = self.observe(&self.prop.pack(z_t))?;
        let z0 = self.prop.unpack(&z0, 0.0);
        Ok(0.5 * self.control_energy(&h) + 0.5 * epsilon * z_t.inner(g, z_t) + z0.inner(g, y0))
    }

    /// `∇J_ε(z) = Λ z + ε z + F_T y₀`.
    pub fn gradient(&self, z_t: &CoupledState, y0: &CoupledState, epsilon: f64) -> Result<CoupledState> {
        let lz = self.gramian_apply(z_t)?;
        let free = self.free_terminal(y0, None)?;
        Ok(lz.axpy(epsilon, z_t).axpy(1.0, &free))
    }

    pub fn solve_null_control(&self, y0: &CoupledState, epsilon: f64, cg: &CgOptions) -> Result<HumResult> {
        self.solve_with_sources(y0, None, epsilon, cg)
    }

    /// Penalized HUM for `y₀` with the sources' contribution folded into the
    /// free terminal state: `(Λ + εI) z = −y_free(T)`.
    pub fn solve_with_sources(
        &self,
        y0: &CoupledState,
        sources: Option<&Sources>,
        epsilon: f64,
        cg: &CgOptions,
    ) -> Result<HumResult> {
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        y0.check_shape(self.prop.grid())?;
        if !y0.is_finite() {
            return Err(Error::Contract("initial state is not finite".into()));
        }
        let free = self.free_terminal(y0, sources)?;
        let b: Vec<f64> = self.prop.pack(&free).iter().map(|v| -v).collect();
        let (z, iterations) = self.conjugate_gradient(&b, epsilon, cg)?;

        let (h, _) = self.observe(&z)?;
        let true_res = {
            let lz = self.terminal_from_rest(&h);
            let r: Vec<f64> = (0..b.len()).map(|i| b[i] - lz[i] - epsilon * z[i]).collect();
            let nb = self.prop.inner(&b, &b).sqrt();
            if nb == 0.0 {
                0.0
            } else {
                self.prop.inner(&r, &r).sqrt() / nb
            }
        };
        let control = ControlSignal::masked(h, &self.prop.params().control_mask);
        let traj = solve_linear_forward(self.prop, y0, Some(&control), sources, self.steps)?;
        let grid = self.prop.grid();
        Ok(HumResult {
            epsilon,
            z_t_opt: self.prop.unpack(&z, y0.t + self.horizon()),
            control_cost: control.l2_norm(grid, self.prop.dt()),
            control,
            terminal_state: traj.terminal().clone(),
            free_terminal: free,
            cg_iterations: iterations,
            cg_residual: true_res,
        })
    }

    /// CG on `(Λ + εI) z = b` in the trapezoid inner product.
    fn conjugate_gradient(&self, b: &[f64], epsilon: f64, cg: &CgOptions) -> Result<(Vec<f64>, usize)> {
        let p_ = self.prop;
        let nb = p_.inner(b, b).sqrt();
        let mut z = vec![0.0; b.len()];
        if nb == 0.0 {
            return Ok((z, 0));
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rr = p_.inner(&r, &r);
        for it in 1..=cg.maxit {
            let mut ap = self.gramian_packed(&p)?;
            ap.iter_mut().zip(&p).for_each(|(a, pi)| *a += epsilon * pi);
            let pap = p_.inner(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::CgStagnation {
                    iterations: it,
                    residual: rr.sqrt() / nb,
                });
            }
            let alpha = rr / pap;
            z.iter_mut().zip(&p).for_each(|(zi, pi)| *zi += alpha * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, a)| *ri -= alpha * a);
            let rr_new = p_.inner(&r, &r);
            if rr_new.sqrt() <= cg.tol * nb {
                return Ok((z, it));
            }
            let beta = rr_new / rr;
            p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
            rr = rr_new;
        }
        Err(Error::CgStagnation {
            iterations: cg.maxit,
            residual: rr.sqrt() / nb,
        })
    }

    /// `(‖σ(0)‖² + ‖v(0)‖²) / Σ dt ‖χ_O v̂_k‖²`.
    pub fn observability_quotient(&self, z_t: &CoupledState) -> Result<f64> {
        let g = self.prop.grid();
        if z_t.norm(g) == 0.0 {
            return Err(Error::Unobserved);
        }
        let (h, z0) = self.observe(&self.prop.pack(z_t))?;
        let den = self.control_energy(&h);
        if den == 0.0 {
            return Err(Error::Unobserved);
        }
        Ok(self.prop.inner(&z0, &z0) / den)
    }

    /// `‖z(0)‖² / ∫_{T/4}^{3T/4} ‖z‖²`, a sampled version of the adjoint
    /// energy-decay bound. Diagnostic only.
    pub fn energy_decay_quotient(&self, z_t: &CoupledState) -> Result<f64> {
        let (states, _) = backward(self.prop, self.prop.pack(z_t), self.steps, |_| None)?;
        let horizon = self.horizon();
        let dt = self.prop.dt();
        let mid: f64 = states
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = *k as f64 * dt;
                t >= 0.25 * horizon && t < 0.75 * horizon
            })
            .map(|(_, z)| dt * self.prop.inner(z, z))
            .sum();
        if mid == 0.0 {
            return Err(Error::Unobserved);
        }
        Ok(self.prop.inner(&states[0], &states[0]) / mid)
    }
}

/// HUM on the first `active_steps` steps, zero control afterwards (the
/// small-time control extended to a longer horizon).
pub fn solve_null_control_padded(
    prop: &Propagator,
    y0: &CoupledState,
    active_steps: usize,
    total_steps: usize,
    epsilon: f64,
    cg: &CgOptions,
) -> Result<HumResult> {
    if active_steps == 0 || active_steps > total_steps {
        return Err(Error::Config(format!(
            "active horizon ({active_steps} steps) must lie in 1..={total_steps}"
        )));
    }
    let short = Hum::new(prop, active_steps).solve_null_control(y0, epsilon, cg)?;
    let mut control = ControlSignal::zeros(prop.grid(), total_steps);
    control.splice(0, &short.control);
    let traj = solve_linear_forward(prop, y0, Some(&control), None, total_steps)?;
    let free = Hum::new(prop, total_steps).free_terminal(y0, None)?;
    Ok(HumResult {
        terminal_state: traj.terminal().clone(),
        free_terminal: free,
        control,
        ..short
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub horizon: f64,
    pub epsilon: f64,
    pub control_cost: f64,
    pub terminal_norm: f64,
    pub cg_iterations: usize,
}

/// Least-squares fit `log(‖h‖/‖y₀‖) ≈ log M̃ + M (T + T^{−m})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostFit {
    pub m_exponent: i32,
    pub log_m_tilde: f64,
    pub rate_m: f64,
    /// Largest absolute residual of the fit in log space.
    pub max_residual: f64,
}

impl CostFit {
    pub fn predict_log_cost(&self, horizon: f64) -> f64 {
        self.log_m_tilde + self.rate_m * (horizon + horizon.powi(-self.m_exponent))
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub fit: Option<CostFit>,
}

pub fn fit_control_cost(rows: &[SweepRow], y0_norm: f64, m: i32) -> Option<CostFit> {
    if rows.len() < 2 || y0_norm == 0.0 {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.horizon + r.horizon.powi(-m)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.control_cost / y0_norm).ln()).collect();
    if ys.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let rate = sxy / sxx;
    let icpt = my - rate * mx;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - icpt - rate * x).abs())
        .fold(0.0, f64::max);
    Some(CostFit {
        m_exponent: m,
        log_m_tilde: icpt,
        rate_m: rate,
        max_residual,
    })
}

/// Runs penalized HUM for each horizon (all multiples of the propagator's `dt`).
pub fn control_cost_sweep(
    prop: &Propagator,
    y0: &CoupledState,
    horizons: &[f64],
    epsilon: f64,
    cg: &CgOptions,
    m: i32,
) -> Result<SweepTable> {
    let grid = prop.grid();
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let tg = crate::dynamics::TimeGrid::new(prop.dt(), t)?;
        let res = Hum::new(prop, tg.steps).solve_null_control(y0, epsilon, cg)?;
        rows.push(SweepRow {
            horizon: t,
            epsilon,
            control_cost: res.control_cost,
            terminal_norm: res.terminal_state.norm(grid),
            cg_iterations: res.cg_iterations,
        });
    }
    let fit = fit_control_cost(&rows, y0.norm(grid), m);
    Ok(SweepTable { rows, fit })
}
