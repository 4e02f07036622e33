//! Manufactured solutions shared by the convergence and acceptance targets.
#![allow(dead_code)]

use chb_control::adjoint::solve_adjoint;
use chb_control::dynamics::{solve_linear_forward, CoupledState, Propagator, Sources};
use chb_control::mesh::Grid;
use chb_control::steady::SystemParams;
use std::f64::consts::PI;

pub const UBAR_AMP: f64 = 0.3;

/// Propagator with the prescribed velocity `ū = 0.3 sin(πx)` and defaults otherwise.
pub fn propagator(n: usize, dt: f64, theta: f64) -> (Grid, Propagator) {
    let g = Grid::new(n).unwrap();
    let p = SystemParams::builder(&g)
        .velocity(g.sample(|x| UBAR_AMP * (PI * x).sin()))
        .build()
        .unwrap();
    let prop = Propagator::new(&g, &p, dt, theta).unwrap();
    (g, prop)
}

fn ubar(x: f64) -> (f64, f64) {
    (UBAR_AMP * (PI * x).sin(), UBAR_AMP * PI * (PI * x).cos())
}

// forward: w* = cos t · sin πx, ψ* = (1 + sin t) cos πx + ½e^{−t} cos 2πx
fn w_star(t: f64, x: f64) -> [f64; 4] {
    let s = (PI * x).sin();
    let c = (PI * x).cos();
    // w, w_t, w_x, w_xx
    [t.cos() * s, -t.sin() * s, t.cos() * PI * c, -t.cos() * PI * PI * s]
}

fn psi_star(t: f64, x: f64) -> [f64; 5] {
    let (b, bt) = (1.0 + t.sin(), t.cos());
    let (d, dt) = (0.5 * (-t).exp(), -0.5 * (-t).exp());
    let (c1, c2) = ((PI * x).cos(), (2.0 * PI * x).cos());
    let (s1, s2) = ((PI * x).sin(), (2.0 * PI * x).sin());
    let p2 = PI * PI;
    // ψ, ψ_t, ψ_x, ψ_xx, ψ_xxxx
    [
        b * c1 + d * c2,
        bt * c1 + dt * c2,
        -b * PI * s1 - 2.0 * d * PI * s2,
        -b * p2 * c1 - 4.0 * d * p2 * c2,
        b * p2 * p2 * c1 + 16.0 * d * p2 * p2 * c2,
    ]
}

pub fn forward_exact(g: &Grid, t: f64) -> CoupledState {
    let mut s = CoupledState::from_fns(g, |x| w_star(t, x)[0], |x| psi_star(t, x)[0]);
    s.t = t;
    s
}

/// Residual of the continuous linearized system at the manufactured solution.
fn forward_residual(prop: &Propagator, t: f64) -> (Vec<f64>, Vec<f64>) {
    let g = prop.grid();
    let p = prop.params();
    let f1 = g.sample_interior(|x| {
        let [_, wt, wx, wxx] = w_star(t, x);
        let (u, ux) = ubar(x);
        let w = w_star(t, x)[0];
        wt - (p.gamma * wxx - u * wx - ux * w + p.gamma1 * psi_star(t, x)[2])
    });
    let f2 = g.sample(|x| {
        let [_, pt, px, pxx, pxxxx] = psi_star(t, x);
        let (u, _) = ubar(x);
        pt - (-pxxxx - p.gamma2 * pxx - u * px)
    });
    (f1, f2)
}

/// Discrete solution at `T = steps·dt` of the manufactured forward problem,
/// with the forcing sampled at `t_k + θ dt`.
pub fn forward_solve(prop: &Propagator, steps: usize) -> CoupledState {
    let dt = prop.dt();
    let mut src = Sources::zeros(prop.grid(), steps);
    for k in 0..steps {
        let (f1, f2) = forward_residual(prop, (k as f64 + prop.theta()) * dt);
        src.f1[k] = f1;
        src.f2[k] = f2;
    }
    let y0 = forward_exact(prop.grid(), 0.0);
    solve_linear_forward(prop, &y0, None, Some(&src), steps)
        .unwrap()
        .terminal()
        .clone()
}

// adjoint: σ* = cos t · sin 2πx, v* = (1 + t²) cos πx
fn sigma_star(t: f64, x: f64) -> [f64; 4] {
    let s = (2.0 * PI * x).sin();
    let c = (2.0 * PI * x).cos();
    // σ, σ_t, σ_x, σ_xx
    [t.cos() * s, -t.sin() * s, 2.0 * PI * t.cos() * c, -4.0 * PI * PI * t.cos() * s]
}

fn v_star(t: f64, x: f64) -> [f64; 5] {
    let a = 1.0 + t * t;
    let c = (PI * x).cos();
    let s = (PI * x).sin();
    let p2 = PI * PI;
    // v, v_t, v_x, v_xx, v_xxxx
    [a * c, 2.0 * t * c, -a * PI * s, -a * p2 * c, a * p2 * p2 * c]
}

pub fn adjoint_exact(g: &Grid, t: f64) -> CoupledState {
    let mut s = CoupledState::from_fns(g, |x| sigma_star(t, x)[0], |x| v_star(t, x)[0]);
    s.t = t;
    s
}

/// `r` with `−z_t = A* z + r`, where `A*` is the formal adjoint:
/// `γσ_xx + ūσ_x` and `−v_xxxx − γ₂v_xx + ūv_x + ū′v − γ₁σ_x`.
fn adjoint_residual(prop: &Propagator, t: f64) -> (Vec<f64>, Vec<f64>) {
    let g = prop.grid();
    let p = prop.params();
    let r1 = g.sample_interior(|x| {
        let [_, st, sx, sxx] = sigma_star(t, x);
        let (u, _) = ubar(x);
        -st - (p.gamma * sxx + u * sx)
    });
    let r2 = g.sample(|x| {
        let [v, vt, vx, vxx, vxxxx] = v_star(t, x);
        let (u, ux) = ubar(x);
        let sx = sigma_star(t, x)[2];
        -vt - (-vxxxx - p.gamma2 * vxx + u * vx + ux * v - p.gamma1 * sx)
    });
    (r1, r2)
}

/// Discrete adjoint at `t = 0` from the exact state at `T = steps·dt`, with
/// the source sampled at `t_{k+1} − θ dt`.
pub fn adjoint_solve(prop: &Propagator, steps: usize) -> CoupledState {
    let dt = prop.dt();
    let horizon = steps as f64 * dt;
    let mut src = Sources::zeros(prop.grid(), steps);
    for k in 0..steps {
        let (r1, r2) = adjoint_residual(prop, (k as f64 + 1.0 - prop.theta()) * dt);
        src.f1[k] = r1;
        src.f2[k] = r2;
    }
    let z_t = adjoint_exact(prop.grid(), horizon);
    solve_adjoint(prop, &z_t, steps, Some(&src))
        .unwrap()
        .initial()
        .clone()
}

pub fn error(g: &Grid, a: &CoupledState, b: &CoupledState) -> f64 {
    a.axpy(-1.0, b).norm(g)
}

/// Observed orders `log₂(e_i / e_{i+1})` for a halving sequence.
pub fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect()
}

/// Forward and adjoint errors for `n ∈ ns`, Crank–Nicolson with a small step.
pub fn spatial_errors(ns: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (dt, steps) = (1e-3, 200);
    let mut fwd = Vec::new();
    let mut adj = Vec::new();
    for &n in ns {
        let (g, prop) = propagator(n, dt, 0.5);
        let horizon = steps as f64 * dt;
        fwd.push(error(&g, &forward_solve(&prop, steps), &forward_exact(&g, horizon)));
        adj.push(error(&g, &adjoint_solve(&prop, steps), &adjoint_exact(&g, 0.0)));
    }
    (fwd, adj)
}

/// Self-convergence errors in time at fixed `n`: `‖y_dt − y_{dt/2}‖` at `T`.
pub fn temporal_errors(theta: f64, n: usize, horizon: f64, dts: &[f64]) -> Vec<f64> {
    let sols: Vec<(Grid, CoupledState)> = dts
        .iter()
        .map(|&dt| {
            let (g, prop) = propagator(n, dt, theta);
            let steps = (horizon / dt).round() as usize;
            (g, forward_solve(&prop, steps))
        })
        .collect();
    sols.windows(2).map(|p| error(&p[0].0, &p[0].1, &p[1].1)).collect()
}
