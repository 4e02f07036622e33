//! Steady state `(ū, φ̄)` with constant concentration and the derived couplings.

use crate::error::{Error, Result};
use crate::mesh::{Grid, Operators};

/// `(γ₁, γ₂) = (4φ̄³ − 4φ̄, −(12φ̄² − 4))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Couplings {
    /// The velocity equation no longer sees `ψ`.
    pub fn decoupled(&self) -> bool {
        self.gamma1 == 0.0
    }
}

pub fn coupling_constants(phibar: f64) -> Couplings {
    Couplings {
        gamma1: 4.0 * phibar.powi(3) - 4.0 * phibar,
        gamma2: -(12.0 * phibar * phibar - 4.0),
    }
}

/// Open control region `O = (a, b) ⊂ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRegion {
    pub a: f64,
    pub b: f64,
}

impl ControlRegion {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a) || !(b > a && b <= 1.0) {
            return Err(Error::Config(format!(
                "control region ({a}, {b}) must satisfy 0 <= a < b <= 1"
            )));
        }
        Ok(ControlRegion { a, b })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.a && x < self.b
    }

    /// Nodal indicator on all grid nodes.
    pub fn mask(&self, grid: &Grid) -> Vec<f64> {
        grid.nodes()
            .iter()
            .map(|&x| if self.contains(x) { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PicardOptions {
    pub tol: f64,
    pub maxit: usize,
    /// `‖f_s‖ ≤ smallness_factor · γ²` is the advisory smallness threshold.
    pub smallness_factor: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-12,
            maxit: 200,
            smallness_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    /// `ū` on all nodes, zero at both ends.
    pub ubar: Vec<f64>,
    pub ubar_x: Vec<f64>,
    pub f_s: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// `‖f_s‖ / (smallness_factor · γ²)`; above 1 the data is outside the
    /// advisory smallness regime even if Picard converged.
    pub smallness_ratio: f64,
}

/// Picard iteration for `−γū'' + ūū' = f_s`, `ū(0) = ū(1) = 0`.
///
/// `f_s` is given on all nodes; only interior values enter.
pub fn solve_steady_burgers(
    grid: &Grid,
    ops: &Operators,
    f_s: &[f64],
    gamma: f64,
    opts: &PicardOptions,
) -> Result<SteadyState> {
    if gamma <= 0.0 {
        return Err(Error::Config(format!("viscosity must be positive, got {gamma}")));
    }
    if opts.tol <= 0.0 {
        return Err(Error::Config("Picard tolerance must be positive".into()));
    }
    if f_s.len() != grid.n_neumann() {
        return Err(Error::Contract(format!(
            "forcing has {} values, grid has {} nodes",
            f_s.len(),
            grid.n_neumann()
        )));
    }
    let f = grid.restrict_interior(f_s);
    let smallness_ratio = grid.l2(f_s) / (opts.smallness_factor * gamma * gamma);
    if smallness_ratio > 1.0 {
        log::warn!("steady forcing exceeds the smallness threshold by {smallness_ratio:.3}x");
    }

    let stiffness = {
        let mut k = ops.d2_dir.clone();
        k.scale_rows(&vec![-gamma; grid.n_dirichlet()]);
        k.factor()?
    };

    let mut u = vec![0.0; grid.n_dirichlet()];
    let mut prev_diff = f64::INFINITY;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let ux = ops.d1_dir.apply(&u);
        let rhs: Vec<f64> = f.iter().zip(u.iter().zip(&ux)).map(|(f, (u, ux))| f - u * ux).collect();
        let next = stiffness.solve(&rhs);
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let d = grid.l2(&diff);
        u = next;
        if !d.is_finite() || d > 2.0 * prev_diff && iterations > 2 {
            return Err(Error::SmallnessViolated(format!(
                "Picard iterates diverge at iteration {iterations} (step {d:e})"
            )));
        }
        if d <= opts.tol {
            break;
        }
        if iterations >= opts.maxit {
            return Err(Error::SmallnessViolated(format!(
                "no convergence in {} iterations (last step {d:e})",
                opts.maxit
            )));
        }
        prev_diff = d;
    }

    let residual = steady_residual(grid, ops, &u, &f, gamma);
    let ubar = grid.extend_dirichlet(&u);
    let ubar_x = ops.d1_full.apply(&ubar);
    Ok(SteadyState {
        ubar,
        ubar_x,
        f_s: f_s.to_vec(),
        iterations,
        residual,
        smallness_ratio,
    })
}

fn steady_residual(grid: &Grid, ops: &Operators, u: &[f64], f: &[f64], gamma: f64) -> f64 {
    let uxx = ops.d2_dir.apply(u);
    let ux = ops.d1_dir.apply(u);
    let r: Vec<f64> = (0..u.len())
        .map(|i| -gamma * uxx[i] + u[i] * ux[i] - f[i])
        .collect();
    grid.l2(&r)
}

/// Everything the linearized and nonlinear dynamics need about the steady state.
#[derive(Debug, Clone)]
pub struct SystemParams {
    pub gamma: f64,
    pub phibar: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub ubar: Vec<f64>,
    pub ubar_x: Vec<f64>,
    pub f_s: Vec<f64>,
    pub region: ControlRegion,
    pub control_mask: Vec<f64>,
}

/// Assembles [`SystemParams`]; refuses `γ₁ = 0` unless explicitly allowed.
#[derive(Debug, Clone)]
pub struct SystemParamsBuilder<'g> {
    grid: &'g Grid,
    gamma: f64,
    phibar: f64,
    region: (f64, f64),
    profile: Profile,
    allow_decoupled: bool,
    picard: PicardOptions,
}

#[derive(Debug, Clone)]
enum Profile {
    Forcing(Vec<f64>),
    Velocity(Vec<f64>),
}

impl SystemParams {
    pub fn builder(grid: &Grid) -> SystemParamsBuilder<'_> {
        SystemParamsBuilder {
            grid,
            gamma: 1.0,
            phibar: 0.5,
            region: (0.3, 0.7),
            profile: Profile::Forcing(vec![0.0; grid.n_neumann()]),
            allow_decoupled: false,
            picard: PicardOptions::default(),
        }
    }

    pub fn couplings(&self) -> Couplings {
        Couplings {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
        }
    }
}

impl<'g> SystemParamsBuilder<'g> {
    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn phibar(mut self, phibar: f64) -> Self {
        self.phibar = phibar;
        self
    }

    pub fn region(mut self, a: f64, b: f64) -> Self {
        self.region = (a, b);
        self
    }

    /// Steady forcing on all nodes; `ū` is obtained by Picard iteration.
    pub fn forcing(mut self, f_s: Vec<f64>) -> Self {
        self.profile = Profile::Forcing(f_s);
        self
    }

    /// Prescribes `ū` on all nodes directly (used by manufactured solutions).
    pub fn velocity(mut self, ubar: Vec<f64>) -> Self {
        self.profile = Profile::Velocity(ubar);
        self
    }

    pub fn allow_decoupled(mut self, allow: bool) -> Self {
        self.allow_decoupled = allow;
        self
    }

    pub fn picard(mut self, opts: PicardOptions) -> Self {
        self.picard = opts;
        self
    }

    pub fn build(self) -> Result<SystemParams> {
        let grid = self.grid;
        if self.gamma <= 0.0 {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.gamma)));
        }
        let c = coupling_constants(self.phibar);
        if c.decoupled() && !self.allow_decoupled {
            return Err(Error::Decoupled { phibar: self.phibar });
        }
        let region = ControlRegion::new(self.region.0, self.region.1)?;
        let ops = Operators::assemble(grid);
        let (ubar, ubar_x, f_s) = match self.profile {
            Profile::Forcing(f_s) => {
                let st = solve_steady_burgers(grid, &ops, &f_s, self.gamma, &self.picard)?;
                (st.ubar, st.ubar_x, st.f_s)
            }
            Profile::Velocity(mut ubar) => {
                if ubar.len() != grid.n_neumann() {
                    return Err(Error::Contract("velocity profile must live on all nodes".into()));
                }
                ubar[0] = 0.0;
                let n = grid.n();
                ubar[n] = 0.0;
                let ubar_x = ops.d1_full.apply(&ubar);
                // forcing consistent with the prescribed profile
                let ui = grid.restrict_interior(&ubar);
                let uxx = ops.d2_dir.apply(&ui);
                let mut f_s = vec![0.0; grid.n_neumann()];
                for i in 0..ui.len() {
                    f_s[i + 1] = -self.gamma * uxx[i] + ui[i] * ubar_x[i + 1];
                }
                (ubar, ubar_x, f_s)
            }
        };
        Ok(SystemParams {
            gamma: self.gamma,
            phibar: self.phibar,
            gamma1: c.gamma1,
            gamma2: c.gamma2,
            control_mask: region.mask(grid),
            ubar,
            ubar_x,
            f_s,
            region,
        })
    }
}
