//! θ-scheme time integration of the coupled `(w, ψ)` system.
//!
//! The spatial operator is
//!
//! ```text
//! w-row:  γ D2 w − ū ⊙ D1 w − ū' ⊙ w + γ₁ ∂x ψ
//! ψ-row: −D4 ψ − γ₂ D2 ψ − ū ⊙ D1 ψ
//! ```
//!
//! and one step reads `M_impl y_{k+1} = M_expl y_k + dt g_k` with
//! `M_impl = I − θ dt A`, `M_expl = I + (1 − θ) dt A`. The forcing `g_k` of
//! step `k` (sources and the control, both sampled for the interval
//! `(t_k, t_{k+1})`) enters the `ψ`-row as `f₂ + χ_O h` and the `w`-row as `f₁`.
//!
//! Internally `w` and `ψ` are interleaved (`ψ₀, w₁, ψ₁, …, w_{n−1}, ψ_{n−1}, ψₙ`)
//! so the block matrix keeps bandwidth 4.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{BandLu, Banded};
use crate::mesh::{discrete_norms, Grid, Operators};
use crate::nonlinear::eval_nonlinear;
use crate::steady::SystemParams;

/// Velocity and concentration perturbations at one time.
///
/// In adjoint solves the same container holds `(σ, v)` in `(w, psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    /// Interior nodes, length `n − 1`.
    pub w: Vec<f64>,
    /// All nodes, length `n + 1`.
    pub psi: Vec<f64>,
    pub t: f64,
}

impl CoupledState {
    pub fn zeros(grid: &Grid) -> Self {
        CoupledState {
            w: vec![0.0; grid.n_dirichlet()],
            psi: vec![0.0; grid.n_neumann()],
            t: 0.0,
        }
    }

    /// Samples `w` at interior nodes and `ψ` at all nodes.
    pub fn from_fns(grid: &Grid, w: impl Fn(f64) -> f64, psi: impl Fn(f64) -> f64) -> Self {
        CoupledState {
            w: grid.sample_interior(w),
            psi: grid.sample(psi),
            t: 0.0,
        }
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.w.len() != grid.n_dirichlet() || self.psi.len() != grid.n_neumann() {
            return Err(Error::Contract(format!(
                "state sizes ({}, {}) do not match grid ({}, {})",
                self.w.len(),
                self.psi.len(),
                grid.n_dirichlet(),
                grid.n_neumann()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.psi).all(|v| v.is_finite())
    }

    /// `⟨w, w'⟩ + ⟨ψ, ψ'⟩` with trapezoid weights.
    pub fn inner(&self, grid: &Grid, other: &CoupledState) -> f64 {
        grid.inner(&self.w, &other.w) + grid.inner(&self.psi, &other.psi)
    }

    /// `L² × L²` norm.
    pub fn norm(&self, grid: &Grid) -> f64 {
        self.inner(grid, self).sqrt()
    }

    pub fn scaled(&self, a: f64) -> CoupledState {
        CoupledState {
            w: self.w.iter().map(|v| a * v).collect(),
            psi: self.psi.iter().map(|v| a * v).collect(),
            t: self.t,
        }
    }

    /// `self + a · other`
    pub fn axpy(&self, a: f64, other: &CoupledState) -> CoupledState {
        CoupledState {
            w: self.w.iter().zip(&other.w).map(|(x, y)| x + a * y).collect(),
            psi: self.psi.iter().zip(&other.psi).map(|(x, y)| x + a * y).collect(),
            t: self.t,
        }
    }
}

/// Uniform time grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Fails unless `horizon` is an integer multiple of `dt` (to 1e-9 relative).
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        if dt <= 0.0 || horizon <= 0.0 {
            return Err(Error::Config(format!(
                "time step and horizon must be positive (dt = {dt}, T = {horizon})"
            )));
        }
        let steps = (horizon / dt).round();
        if (steps * dt - horizon).abs() > 1e-9 * horizon || steps < 1.0 {
            return Err(Error::Config(format!(
                "horizon {horizon} is not a multiple of dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            dt,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Per-step norms `(‖w‖, ‖ψ‖, ‖ψ_xx‖)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub w: f64,
    pub psi: f64,
    pub psi_xx: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CoupledState>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn initial(&self) -> &CoupledState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &CoupledState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn energy_report(&self, grid: &Grid, ops: &Operators) -> Vec<EnergyRecord> {
        self.states
            .iter()
            .map(|s| EnergyRecord {
                t: s.t,
                w: grid.l2(&s.w),
                psi: grid.l2(&s.psi),
                psi_xx: grid.l2(&ops.d2_neu.apply(&s.psi)),
            })
            .collect()
    }

    /// `C([0,T]; L²) ∩ L²(0,T; H¹₀)` norm of `w` plus the
    /// `C([0,T]; L²) ∩ L²(0,T; H²₁)` norm of `ψ`, with left-rectangle time sums.
    pub fn norm(&self, grid: &Grid, ops: &Operators) -> f64 {
        let mut sup_w: f64 = 0.0;
        let mut sup_psi: f64 = 0.0;
        let mut int_w = 0.0;
        let mut int_psi = 0.0;
        for (k, s) in self.states.iter().enumerate() {
            let nw = discrete_norms(grid, ops, &s.w).expect("shape checked");
            let np = discrete_norms(grid, ops, &s.psi).expect("shape checked");
            sup_w = sup_w.max(nw.l2);
            sup_psi = sup_psi.max(np.l2);
            if k < self.states.len() - 1 {
                int_w += self.dt * nw.h1_semi.powi(2);
                int_psi += self.dt * np.h2_1().powi(2);
            }
        }
        sup_w + int_w.sqrt() + sup_psi + int_psi.sqrt()
    }

    /// State-wise `self − other`.
    pub fn difference(&self, other: &Trajectory) -> Trajectory {
        assert_eq!(self.states.len(), other.states.len());
        Trajectory {
            dt: self.dt,
            states: self
                .states
                .iter()
                .zip(&other.states)
                .map(|(a, b)| a.axpy(-1.0, b))
                .collect(),
        }
    }

    /// CSV with columns `t, x, <w_name>, <psi_name>`; `w` is padded with its
    /// zero boundary values.
    pub fn write_csv(&self, grid: &Grid, out: impl Write, names: (&str, &str)) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["t", "x", names.0, names.1])?;
        for s in &self.states {
            let w = grid.extend_dirichlet(&s.w);
            for (i, x) in grid.nodes().iter().enumerate() {
                wr.write_record([
                    crate::harness::fmt_f64(s.t),
                    crate::harness::fmt_f64(*x),
                    crate::harness::fmt_f64(w[i]),
                    crate::harness::fmt_f64(s.psi[i]),
                ])?;
            }
        }
        wr.flush().map_err(|e| Error::io("trajectory csv", e))?;
        Ok(())
    }
}

/// Control `h` per time step on all `ψ` nodes, zero outside `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn zeros(grid: &Grid, steps: usize) -> Self {
        ControlSignal {
            values: vec![vec![0.0; grid.n_neumann()]; steps],
        }
    }

    /// Multiplies every field by the control mask.
    pub fn masked(mut values: Vec<Vec<f64>>, mask: &[f64]) -> Self {
        for v in &mut values {
            assert_eq!(v.len(), mask.len());
            v.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
        }
        ControlSignal { values }
    }

    /// Rejects fields that do not vanish outside the mask.
    pub fn new(values: Vec<Vec<f64>>, mask: &[f64]) -> Result<Self> {
        for (k, v) in values.iter().enumerate() {
            if v.len() != mask.len() {
                return Err(Error::Contract(format!("control step {k} has wrong length")));
            }
            if v.iter().zip(mask).any(|(a, m)| *m == 0.0 && *a != 0.0) {
                return Err(Error::Contract(format!(
                    "control step {k} is nonzero outside the control region"
                )));
            }
        }
        Ok(ControlSignal { values })
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// `‖h‖_{L²(0,T; L²(O))}` with left-rectangle time quadrature.
    pub fn l2_norm(&self, grid: &Grid, dt: f64) -> f64 {
        self.values
            .iter()
            .map(|v| dt * grid.inner(v, v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, a: f64) -> ControlSignal {
        ControlSignal {
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| a * x).collect())
                .collect(),
        }
    }

    /// Overwrites steps `start..start + piece.steps()`.
    pub fn splice(&mut self, start: usize, piece: &ControlSignal) {
        for (k, v) in piece.values.iter().enumerate() {
            self.values[start + k].clone_from(v);
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ControlSignal {
        ControlSignal {
            values: self.values[range].to_vec(),
        }
    }
}

/// Per-step forcing `(f₁, f₂)` on `(w, ψ)` dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
}

impl Sources {
    pub fn zeros(grid: &Grid, steps: usize) -> Self {
        Sources {
            f1: vec![vec![0.0; grid.n_dirichlet()]; steps],
            f2: vec![vec![0.0; grid.n_neumann()]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.f1.len()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Sources {
        Sources {
            f1: self.f1[range.clone()].to_vec(),
            f2: self.f2[range].to_vec(),
        }
    }

    /// `Σ_k dt · ‖(f₁, f₂)_k‖_{L²×L²}`.
    pub fn l1_l2_norm(&self, grid: &Grid, dt: f64) -> f64 {
        self.f1
            .iter()
            .zip(&self.f2)
            .map(|(a, b)| dt * (grid.inner(a, a) + grid.inner(b, b)).sqrt())
            .sum()
    }
}

/// Index layout of the interleaved `(w, ψ)` vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    n: usize,
}

impl Layout {
    pub(crate) fn dim(&self) -> usize {
        2 * self.n
    }

    /// Interior node `i ∈ 1..n`.
    fn w(&self, i: usize) -> usize {
        2 * i - 1
    }

    fn psi(&self, i: usize) -> usize {
        if i == self.n {
            2 * self.n - 1
        } else {
            2 * i
        }
    }
}

/// Factor-once one-step map of the linearized system.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid,
    ops: Operators,
    params: SystemParams,
    dt: f64,
    theta: f64,
    layout: Layout,
    a_h: Banded,
    m_impl: BandLu,
    weights: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &Grid, params: &SystemParams, dt: f64, theta: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {theta}")));
        }
        if params.ubar.len() != grid.n_neumann() {
            return Err(Error::Contract("steady profile does not match grid".into()));
        }
        let ops = Operators::assemble(grid);
        let layout = Layout { n: grid.n() };
        let a_h = assemble_block_operator(grid, &ops, params, layout);
        let id = Banded::identity(layout.dim());
        let m_impl = id.combine(1.0, &a_h, -theta * dt).factor()?;
        let mut weights = vec![0.0; layout.dim()];
        for i in 1..grid.n() {
            weights[layout.w(i)] = grid.dx();
        }
        for (i, q) in grid.quad_weights().iter().enumerate() {
            weights[layout.psi(i)] = *q;
        }
        Ok(Propagator {
            grid: grid.clone(),
            ops,
            params: params.clone(),
            dt,
            theta,
            layout,
            a_h,
            m_impl,
            weights,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ops(&self) -> &Operators {
        &self.ops
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The assembled spatial block operator in interleaved ordering.
    pub fn block_operator(&self) -> &Banded {
        &self.a_h
    }

    pub(crate) fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn pack(&self, s: &CoupledState) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.dim()];
        for (r, v) in s.w.iter().enumerate() {
            y[self.layout.w(r + 1)] = *v;
        }
        for (i, v) in s.psi.iter().enumerate() {
            y[self.layout.psi(i)] = *v;
        }
        y
    }

    pub fn unpack(&self, y: &[f64], t: f64) -> CoupledState {
        let n = self.grid.n();
        CoupledState {
            w: (1..n).map(|i| y[self.layout.w(i)]).collect(),
            psi: (0..=n).map(|i| y[self.layout.psi(i)]).collect(),
            t,
        }
    }

    /// Interleaves `(f₁, f₂ + h)`; `h` is expected to be masked already.
    pub(crate) fn forcing(&self, f1: Option<&[f64]>, f2: Option<&[f64]>, h: Option<&[f64]>) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.dim()];
        if let Some(f1) = f1 {
            for (r, v) in f1.iter().enumerate() {
                g[self.layout.w(r + 1)] += v;
            }
        }
        for part in [f2, h].into_iter().flatten() {
            for (i, v) in part.iter().enumerate() {
                g[self.layout.psi(i)] += v;
            }
        }
        g
    }

    /// Extracts the masked `ψ` component of an interleaved vector.
    pub(crate) fn masked_psi(&self, y: &[f64]) -> Vec<f64> {
        let mask = &self.params.control_mask;
        (0..=self.grid.n())
            .map(|i| mask[i] * y[self.layout.psi(i)])
            .collect()
    }

    pub(crate) fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// `y ↦ M_impl⁻¹ (M_expl y + dt g)`, evaluated in increment form
    /// `y + M_impl⁻¹ dt (A y + g)` so round-off scales with the update.
    pub fn step(&self, y: &[f64], g: Option<&[f64]>) -> Vec<f64> {
        let mut d = self.a_h.apply(y);
        if let Some(g) = g {
            d.iter_mut().zip(g).for_each(|(r, gi)| *r += gi);
        }
        d.iter_mut().for_each(|r| *r *= self.dt);
        self.m_impl.solve_in_place(&mut d);
        d.iter_mut().zip(y).for_each(|(r, yi)| *r += yi);
        d
    }

    /// `z ↦ W⁻¹ M_impl⁻ᵀ W z`, the adjoint of `M_impl⁻¹` in the weighted inner product.
    pub(crate) fn adjoint_solve(&self, z: &[f64]) -> Vec<f64> {
        let mut c: Vec<f64> = z.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        self.m_impl.solve_transpose_in_place(&mut c);
        c.iter_mut().zip(&self.weights).for_each(|(a, w)| *a /= w);
        c
    }

    /// One backward step: `ẑ = W⁻¹ M_impl⁻ᵀ W z_{k+1}` and
    /// `z_k = z_{k+1} + dt W⁻¹ Aᵀ W ẑ`, the transpose of [`Propagator::step`].
    pub(crate) fn adjoint_step(&self, z_next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let zh = self.adjoint_solve(z_next);
        let c: Vec<f64> = zh.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        let mut z = self.a_h.apply_transpose(&c);
        for ((zi, w), zn) in z.iter_mut().zip(&self.weights).zip(z_next) {
            *zi = zn + self.dt * *zi / w;
        }
        (z, zh)
    }

    fn check_inputs(
        &self,
        y0: &CoupledState,
        control: Option<&ControlSignal>,
        sources: Option<&Sources>,
        steps: usize,
    ) -> Result<()> {
        y0.check_shape(&self.grid)?;
        if !y0.is_finite() {
            return Err(Error::Contract("initial state is not finite".into()));
        }
        if let Some(c) = control {
            if c.steps() != steps {
                return Err(Error::Contract(format!(
                    "control has {} steps, solve has {steps}",
                    c.steps()
                )));
            }
        }
        if let Some(s) = sources {
            if s.steps() != steps || s.f2.len() != steps {
                return Err(Error::Contract(format!(
                    "sources have {} steps, solve has {steps}",
                    s.steps()
                )));
            }
        }
        Ok(())
    }
}

fn assemble_block_operator(grid: &Grid, ops: &Operators, p: &SystemParams, l: Layout) -> Banded {
    let n = grid.n();
    let mut a = Banded::square(l.dim(), 4, 4);
    // w-rows
    for r in 0..n - 1 {
        let i = r + 1;
        let row = l.w(i);
        for c in r.saturating_sub(1)..(r + 2).min(n - 1) {
            let col = l.w(c + 1);
            let v = p.gamma * ops.d2_dir.get(r, c) - p.ubar[i] * ops.d1_dir.get(r, c);
            a.add(row, col, v);
        }
        a.add(row, row, -p.ubar_x[i]);
        for c in [r, r + 2] {
            a.add(row, l.psi(c), p.gamma1 * ops.d1_neu_to_dir.get(r, c));
        }
    }
    // psi-rows
    for i in 0..=n {
        let row = l.psi(i);
        for c in i.saturating_sub(2)..(i + 3).min(n + 1) {
            let v = -ops.d4_neu.get(i, c) - p.gamma2 * ops.d2_neu.get(i, c)
                - p.ubar[i] * ops.d1_neu.get(i, c);
            if v != 0.0 {
                a.add(row, l.psi(c), v);
            }
        }
    }
    a
}

fn run(
    prop: &Propagator,
    y0: &CoupledState,
    steps: usize,
    mut forcing: impl FnMut(usize, &[f64]) -> Option<Vec<f64>>,
) -> Result<Trajectory> {
    let dt = prop.dt;
    let t0 = y0.t;
    let mut y = prop.pack(y0);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(prop.unpack(&y, t0));
    for k in 0..steps {
        let g = forcing(k, &y);
        y = prop.step(&y, g.as_deref());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { step: k + 1 });
        }
        states.push(prop.unpack(&y, t0 + (k + 1) as f64 * dt));
    }
    Ok(Trajectory { dt, states })
}

/// Linear forward solve with optional control and sources.
pub fn solve_linear_forward(
    prop: &Propagator,
    y0: &CoupledState,
    control: Option<&ControlSignal>,
    sources: Option<&Sources>,
    steps: usize,
) -> Result<Trajectory> {
    prop.check_inputs(y0, control, sources, steps)?;
    if control.is_none() && sources.is_none() {
        return run(prop, y0, steps, |_, _| None);
    }
    run(prop, y0, steps, |k, _| {
        Some(prop.forcing(
            sources.map(|s| s.f1[k].as_slice()),
            sources.map(|s| s.f2[k].as_slice()),
            control.map(|c| c.step(k)),
        ))
    })
}

/// Semi-implicit nonlinear solve: the linear part as in [`Propagator`], the
/// nonlinear terms `N₁, N₂` evaluated at the previous step.
pub fn solve_nonlinear_forward(
    prop: &Propagator,
    y0: &CoupledState,
    control: Option<&ControlSignal>,
    steps: usize,
) -> Result<Trajectory> {
    prop.check_inputs(y0, control, None, steps)?;
    run(prop, y0, steps, |k, y| {
        let s = prop.unpack(y, 0.0);
        let (n1, n2) = eval_nonlinear(&prop.grid, &prop.ops, &prop.params, &s.w, &s.psi);
        Some(prop.forcing(Some(&n1), Some(&n2), control.map(|c| c.step(k))))
    })
}
