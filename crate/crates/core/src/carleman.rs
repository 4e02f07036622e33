//! The auxiliary function `ν`, the Carleman weights and numerical probes of
//! the joint Carleman estimate.
//!
//! ```text
//! φ_m(t,x) = (e^{((m+1)/m) λ k ‖ν‖∞} − e^{λ(k‖ν‖∞ + ν(x))}) / (t(T−t))^m
//! ξ_m(t,x) =  e^{λ(k‖ν‖∞ + ν(x))} / (t(T−t))^m
//! ```
//!
//! The weights `e^{−2sφ_m} ξ_m^l` live far outside the `f64` range for any
//! `s` of interest, so everything is accumulated as logarithms.

use crate::adjoint::solve_adjoint;
use crate::dynamics::{CoupledState, Propagator};
use crate::error::{Error, Result};
use crate::mesh::Grid;
use crate::source_term::log_sum_exp;

/// Septic smoothstep `S(τ) = 35τ⁴ − 84τ⁵ + 70τ⁶ − 20τ⁷` and its
/// antiderivative and first three derivatives.
fn smoothstep(tau: f64) -> [f64; 5] {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    let t4 = t2 * t2;
    [
        7.0 * t4 * t - 14.0 * t3 * t3 + 10.0 * t4 * t3 - 2.5 * t4 * t4,
        35.0 * t4 - 84.0 * t4 * t + 70.0 * t3 * t3 - 20.0 * t4 * t3,
        140.0 * t3 - 420.0 * t4 + 420.0 * t4 * t - 140.0 * t3 * t3,
        420.0 * t2 - 1680.0 * t3 + 2100.0 * t4 - 840.0 * t4 * t,
        840.0 * t - 5040.0 * t2 + 8400.0 * t3 - 4200.0 * t4,
    ]
}

/// `ν ∈ C⁴([0,1])` with `ν' = c₁` left of `O₀`, `ν' = −c₂` right of it and
/// a single sign change inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nu {
    pub a0: f64,
    pub b0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Start and length of the transition `[a₀+δ, b₀−δ]`, `δ = (b₀−a₀)/4`.
    start: f64,
    len: f64,
    x_max: f64,
    sup: f64,
}

/// Builds `ν` for `O₀ = (a₀, b₀)`, which must sit strictly inside `O = (a, b)`.
pub fn build_nu(o0: (f64, f64), o: (f64, f64)) -> Result<Nu> {
    let (a0, b0) = o0;
    if !(o.0 < a0 && a0 < b0 && b0 < o.1) || a0 <= 0.0 || b0 >= 1.0 {
        return Err(Error::Config(format!(
            "O0 = ({a0}, {b0}) must lie strictly inside O = ({}, {})",
            o.0, o.1
        )));
    }
    let delta = (b0 - a0) / 4.0;
    let start = a0 + delta;
    let len = b0 - a0 - 2.0 * delta;
    let right = 1.0 - (b0 - delta);
    let c1 = 1.0;
    let c2 = (start + 0.5 * len) / (right + 0.5 * len);
    let mut nu = Nu {
        a0,
        b0,
        c1,
        c2,
        start,
        len,
        x_max: 0.0,
        sup: 0.0,
    };
    // ν' = c₁ − (c₁+c₂) S(τ) vanishes where S(τ) = c₁/(c₁+c₂)
    let target = c1 / (c1 + c2);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if smoothstep(mid)[1] < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    nu.x_max = start + 0.5 * (lo + hi) * len;
    nu.sup = nu.derivs(nu.x_max)[0];
    Ok(nu)
}

impl Nu {
    /// `[ν, ν', ν'', ν''', ν'''']` at `x`.
    pub fn derivs(&self, x: f64) -> [f64; 5] {
        let (c1, c2) = (self.c1, self.c2);
        if x <= self.start {
            return [c1 * x, c1, 0.0, 0.0, 0.0];
        }
        if x >= self.start + self.len {
            return [c2 * (1.0 - x), -c2, 0.0, 0.0, 0.0];
        }
        let tau = (x - self.start) / self.len;
        let s = smoothstep(tau);
        let c = c1 + c2;
        let l = self.len;
        [
            c1 * x - c * l * s[0],
            c1 - c * s[1],
            -c * s[2] / l,
            -c * s[3] / (l * l),
            -c * s[4] / (l * l * l),
        ]
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivs(x)[0]
    }

    /// `‖ν‖∞`, attained at [`Nu::argmax`].
    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn argmax(&self) -> f64 {
        self.x_max
    }

    /// Slope floor `ĉ = min(c₁, c₂)` of `|ν'|` outside `O₀`.
    pub fn c_hat(&self) -> f64 {
        self.c1.min(self.c2)
    }

    /// The five derivative orders sampled on the nodes of `grid`.
    pub fn on_grid(&self, grid: &Grid) -> [Vec<f64>; 5] {
        let d: Vec<[f64; 5]> = grid.nodes().iter().map(|x| self.derivs(*x)).collect();
        std::array::from_fn(|j| d.iter().map(|v| v[j]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanWeights {
    pub nu: Nu,
    pub lambda: f64,
    pub s: f64,
    pub k: u32,
    pub m: u32,
    pub horizon: f64,
}

impl CarlemanWeights {
    pub fn new(nu: Nu, lambda: f64, s: f64, k: u32, m: u32, horizon: f64) -> Result<Self> {
        if m <= 3 || k <= m {
            return Err(Error::Config(format!("need k > m > 3, got k = {k}, m = {m}")));
        }
        if !(lambda >= 1.0) {
            return Err(Error::Config(format!("lambda must be >= 1, got {lambda}")));
        }
        if !(s > 0.0) || !(horizon > 0.0) {
            return Err(Error::Config(format!("s and T must be positive (s = {s}, T = {horizon})")));
        }
        Ok(CarlemanWeights {
            nu,
            lambda,
            s,
            k,
            m,
            horizon,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t < self.horizon) {
            return Err(Error::Contract(format!("t = {t} outside (0, {})", self.horizon)));
        }
        Ok(())
    }

    fn log_time_factor(&self, t: f64) -> f64 {
        -(self.m as f64) * (t * (self.horizon - t)).ln()
    }

    fn exponents(&self, x: f64) -> (f64, f64) {
        let kn = self.k as f64 * self.nu.sup_norm();
        let top = (self.m as f64 + 1.0) / self.m as f64 * self.lambda * kn;
        (top, self.lambda * (kn + self.nu.value(x)))
    }

    /// `(φ_m, ξ_m)` at `(t, x)`.
    pub fn eval(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        let (top, e) = self.exponents(x);
        let tf = self.log_time_factor(t).exp();
        Ok(((top.exp() - e.exp()) * tf, e.exp() * tf))
    }

    /// `log(e^{−2sφ_m} ξ_m^l)`.
    pub fn log_factor(&self, t: f64, x: f64, l: f64) -> Result<f64> {
        self.check_time(t)?;
        let (phi, _) = self.eval(t, x)?;
        let (_, e) = self.exponents(x);
        Ok(-2.0 * self.s * phi + l * (e + self.log_time_factor(t)))
    }

    /// `e^{−2sφ_m} ξ_m^l`, flushed to zero below `e^{−700}`.
    pub fn factor(&self, t: f64, x: f64, l: f64) -> Result<f64> {
        let lf = self.log_factor(t, x, l)?;
        Ok(if lf < -700.0 { 0.0 } else { lf.exp() })
    }

    /// `|∂x(e^{−2sφ} ξ^l)| / (sλ e^{−2sφ} ξ^{l+1}) = |ν'| (2 + l/(sξ))`.
    pub fn derivative_ratio(&self, t: f64, x: f64, l: f64) -> Result<f64> {
        let (_, xi) = self.eval(t, x)?;
        Ok(self.nu.derivs(x)[1].abs() * (2.0 + l / (self.s * xi)))
    }

    /// `ξ^{1/m} ≤ T^{2m−2} ξ`, checked in log form.
    pub fn xi_power_holds(&self, t: f64, x: f64) -> Result<bool> {
        let (_, xi) = self.eval(t, x)?;
        let m = self.m as f64;
        Ok(xi.ln() / m <= (2.0 * m - 2.0) * self.horizon.ln() + xi.ln() + 1e-12)
    }
}

/// `s ≥ μ₀ (e^{mCT} T^m + T^{2m−1} + T^{2m})`.
pub fn s_floor(mu0: f64, c: f64, m: u32, horizon: f64) -> f64 {
    let mi = m as i32;
    mu0 * ((m as f64 * c * horizon).exp() * horizon.powi(mi)
        + horizon.powi(2 * mi - 1)
        + horizon.powi(2 * mi))
}

/// Weight-derivative constant: the largest [`CarlemanWeights::derivative_ratio`]
/// over `(t, x)` samples.
pub fn derivative_bound_constant(w: &CarlemanWeights, times: &[f64], xs: &[f64], l: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &t in times {
        for &x in xs {
            c = c.max(w.derivative_ratio(t, x, l)?);
        }
    }
    Ok(c)
}

/// Both sides of the joint estimate as `shift + rel`. The shift is the largest
/// weight exponent and does not depend on `z_T`, so `rel_lhs − rel_rhs` keeps
/// full precision even when the weights push the logarithms to ~10⁶.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanRatio {
    pub shift: f64,
    pub rel_lhs: f64,
    pub rel_rhs: f64,
}

impl CarlemanRatio {
    pub fn log_lhs(&self) -> f64 {
        self.shift + self.rel_lhs
    }

    pub fn log_rhs(&self) -> f64 {
        self.shift + self.rel_rhs
    }

    pub fn lhs(&self) -> f64 {
        clamp_exp(self.log_lhs())
    }

    pub fn rhs(&self) -> f64 {
        clamp_exp(self.log_rhs())
    }

    pub fn ratio(&self) -> f64 {
        (self.rel_lhs - self.rel_rhs).exp()
    }
}

fn clamp_exp(v: f64) -> f64 {
    if v < -700.0 {
        0.0
    } else {
        v.exp()
    }
}

/// Both sides of the joint Carleman estimate for the adjoint solution from
/// `z_T` over `steps` steps (`steps · dt` must equal the weights' horizon).
///
/// Returns `None` when `z_T = 0`.
pub fn carleman_ratio(
    prop: &Propagator,
    z_t: &CoupledState,
    steps: usize,
    w: &CarlemanWeights,
) -> Result<Option<CarlemanRatio>> {
    let grid = prop.grid();
    let dt = prop.dt();
    if ((steps as f64) * dt - w.horizon).abs() > 1e-9 * w.horizon {
        return Err(Error::Contract(format!(
            "{steps} steps of {dt} do not match the weight horizon {}",
            w.horizon
        )));
    }
    if z_t.norm(grid) == 0.0 {
        return Ok(None);
    }
    let mut z = z_t.clone();
    z.t = w.horizon;
    let adj = solve_adjoint(prop, &z, steps, None)?;
    let ops = prop.ops();
    let mask = &prop.params().control_mask;
    let q = grid.quad_weights();
    let (s, lam) = (w.s, w.lambda);
    // (weight exponent, 2 ln|field|) per term; the weight part is z-independent
    let mut lhs_terms = Vec::new();
    let mut rhs_terms = Vec::new();
    let x_log: Vec<(f64, f64)> = grid.nodes().iter().map(|x| w.exponents(*x)).collect();
    let powers = |p: f64, log_xi: f64| p * s.ln() + (p + 1.0) * lam.ln() + p * log_xi;
    for k in 1..steps {
        let t = k as f64 * dt;
        let st = &adj.states[k];
        let sx = ops.d1_full.apply(&grid.extend_dirichlet(&st.w));
        let tf = w.log_time_factor(t);
        for (i, &(top, e)) in x_log.iter().enumerate() {
            let phi = (top.exp() - e.exp()) * tf.exp();
            let log_xi = e + tf;
            let base = dt.ln() + q[i].ln() - 2.0 * s * phi;
            if sx[i] != 0.0 {
                lhs_terms.push((base + powers(3.0, log_xi), 2.0 * sx[i].abs().ln()));
            }
            let v = st.psi[i];
            if v != 0.0 {
                lhs_terms.push((base + powers(7.0, log_xi), 2.0 * v.abs().ln()));
                if mask[i] != 0.0 {
                    rhs_terms.push((base + powers(39.0, log_xi), 2.0 * (mask[i] * v).abs().ln()));
                }
            }
        }
    }
    let shift = lhs_terms
        .iter()
        .chain(&rhs_terms)
        .map(|t| t.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let rel = |terms: &[(f64, f64)]| log_sum_exp(&terms.iter().map(|(a, b)| (a - shift) + b).collect::<Vec<_>>());
    let (rel_lhs, rel_rhs) = (rel(&lhs_terms), rel(&rhs_terms));
    if rel_rhs == f64::NEG_INFINITY && rel_lhs > f64::NEG_INFINITY {
        return Err(Error::WeightUnderflow);
    }
    Ok(Some(CarlemanRatio { shift, rel_lhs, rel_rhs }))
}

/// One Monte-Carlo probe sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub sample_id: usize,
    pub s: f64,
    pub lambda: f64,
    pub ratio: CarlemanRatio,
}

/// Evaluates [`carleman_ratio`] for each terminal state; zero states are skipped.
pub fn carleman_probe<'a>(
    prop: &Propagator,
    steps: usize,
    w: &CarlemanWeights,
    samples: impl IntoIterator<Item = &'a CoupledState>,
) -> Result<Vec<ProbeRow>> {
    let mut rows = Vec::new();
    for (id, z) in samples.into_iter().enumerate() {
        if let Some(r) = carleman_ratio(prop, z, steps, w)? {
            rows.push(ProbeRow {
                sample_id: id,
                s: w.s,
                lambda: w.lambda,
                ratio: r,
            });
        }
    }
    Ok(rows)
}
