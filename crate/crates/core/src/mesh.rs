//! Uniform grid on `[0, 1]`, central-difference operators and discrete norms.
//!
//! Two families of fields live on the grid:
//!
//! * Dirichlet fields (the velocity perturbation `w`): values on the interior
//!   nodes `1..n`, the zero boundary values are eliminated.
//! * Neumann-type fields (the concentration perturbation `ψ`): values on all
//!   nodes `0..=n`. Ghost values come from even reflection,
//!   `ψ₋ⱼ = ψⱼ` and `ψₙ₊ⱼ = ψₙ₋ⱼ`, which enforces `ψ_x = ψ_xxx = 0` at both ends.
//!
//! All inner products use trapezoid weights. On Dirichlet fields these reduce
//! to `dx` per interior node.

use crate::error::{Error, Result};
use crate::linalg::Banded;

pub const MIN_INTERVALS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    dx: f64,
    nodes: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_INTERVALS {
            return Err(Error::Config(format!(
                "grid needs at least {MIN_INTERVALS} intervals for the fourth-order stencil, got {n}"
            )));
        }
        let dx = 1.0 / n as f64;
        let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut quad_weights = vec![dx; n + 1];
        quad_weights[0] = 0.5 * dx;
        quad_weights[n] = 0.5 * dx;
        Ok(Grid {
            n,
            dx,
            nodes,
            quad_weights,
        })
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.n]
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Number of Dirichlet degrees of freedom (`n - 1`).
    pub fn n_dirichlet(&self) -> usize {
        self.n - 1
    }

    /// Number of Neumann-type degrees of freedom (`n + 1`).
    pub fn n_neumann(&self) -> usize {
        self.n + 1
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    pub fn sample_interior(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.interior_nodes().iter().map(|&x| f(x)).collect()
    }

    /// Pads a Dirichlet field with its zero boundary values.
    pub fn extend_dirichlet(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n_dirichlet());
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(0.0);
        out.extend_from_slice(w);
        out.push(0.0);
        out
    }

    pub fn restrict_interior(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.n_neumann());
        full[1..self.n].to_vec()
    }

    /// Trapezoid-weighted inner product; the field kind is inferred from the length.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        if a.len() == self.n_dirichlet() {
            self.dx * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
        } else {
            assert_eq!(a.len(), self.n_neumann(), "field length does not match grid");
            self.quad_weights
                .iter()
                .zip(a.iter().zip(b))
                .map(|(q, (x, y))| q * x * y)
                .sum()
        }
    }

    pub fn l2(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }
}

/// Which boundary closure a field uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Dirichlet,
    Neumann,
}

impl FieldKind {
    pub fn of(grid: &Grid, len: usize) -> Result<Self> {
        if len == grid.n_dirichlet() {
            Ok(FieldKind::Dirichlet)
        } else if len == grid.n_neumann() {
            Ok(FieldKind::Neumann)
        } else {
            Err(Error::Contract(format!(
                "field of length {len} fits neither {} Dirichlet nor {} Neumann dofs",
                grid.n_dirichlet(),
                grid.n_neumann()
            )))
        }
    }
}

/// Difference operators on one grid. Immutable after assembly.
#[derive(Debug, Clone)]
pub struct Operators {
    /// `∂x` on Dirichlet dofs.
    pub d1_dir: Banded,
    /// `∂xx` on Dirichlet dofs.
    pub d2_dir: Banded,
    /// `∂x` on all nodes with reflection ghosts (rows 0 and n vanish).
    pub d1_neu: Banded,
    /// `∂xx` on all nodes with reflection ghosts.
    pub d2_neu: Banded,
    /// `∂xxxx` on all nodes with reflection ghosts; equals `d2_neu²`.
    pub d4_neu: Banded,
    /// `∂x` of a Neumann field evaluated at interior nodes, `(n-1) × (n+1)`.
    pub d1_neu_to_dir: Banded,
    /// `∂x` on all nodes with one-sided second-order end rows, for fields that
    /// satisfy no particular boundary condition (such as `ū`).
    pub d1_full: Banded,
}

impl Operators {
    pub fn assemble(grid: &Grid) -> Self {
        let n = grid.n();
        let h = grid.dx();
        let h2 = h * h;
        let h4 = h2 * h2;
        let m = n - 1;

        let mut d1_dir = Banded::square(m, 1, 1);
        let mut d2_dir = Banded::square(m, 1, 1);
        for i in 0..m {
            if i > 0 {
                d1_dir.set(i, i - 1, -0.5 / h);
                d2_dir.set(i, i - 1, 1.0 / h2);
            }
            d2_dir.set(i, i, -2.0 / h2);
            if i + 1 < m {
                d1_dir.set(i, i + 1, 0.5 / h);
                d2_dir.set(i, i + 1, 1.0 / h2);
            }
        }

        let np = n + 1;
        // reflect a (possibly ghost) index back into 0..=n
        let reflect = |j: isize| -> usize {
            let n = n as isize;
            let r = if j < 0 {
                -j
            } else if j > n {
                2 * n - j
            } else {
                j
            };
            r as usize
        };
        let stencil = |op: &mut Banded, i: usize, coeffs: &[(isize, f64)]| {
            for &(off, c) in coeffs {
                op.add(i, reflect(i as isize + off), c);
            }
        };

        let mut d1_neu = Banded::square(np, 1, 1);
        let mut d2_neu = Banded::square(np, 1, 1);
        let mut d4_neu = Banded::square(np, 2, 2);
        for i in 0..np {
            if i != 0 && i != n {
                stencil(&mut d1_neu, i, &[(-1, -0.5 / h), (1, 0.5 / h)]);
            }
            stencil(&mut d2_neu, i, &[(-1, 1.0 / h2), (0, -2.0 / h2), (1, 1.0 / h2)]);
            stencil(
                &mut d4_neu,
                i,
                &[
                    (-2, 1.0 / h4),
                    (-1, -4.0 / h4),
                    (0, 6.0 / h4),
                    (1, -4.0 / h4),
                    (2, 1.0 / h4),
                ],
            );
        }

        let mut d1_neu_to_dir = Banded::zeros(m, np, 1, 1, 1);
        for r in 0..m {
            // interior node i = r + 1 reads psi_{i-1} and psi_{i+1}
            d1_neu_to_dir.set(r, r, -0.5 / h);
            d1_neu_to_dir.set(r, r + 2, 0.5 / h);
        }

        let mut d1_full = Banded::square(np, 2, 2);
        d1_full.set(0, 0, -1.5 / h);
        d1_full.set(0, 1, 2.0 / h);
        d1_full.set(0, 2, -0.5 / h);
        for i in 1..n {
            d1_full.set(i, i - 1, -0.5 / h);
            d1_full.set(i, i + 1, 0.5 / h);
        }
        d1_full.set(n, n, 1.5 / h);
        d1_full.set(n, n - 1, -2.0 / h);
        d1_full.set(n, n - 2, 0.5 / h);

        Operators {
            d1_dir,
            d2_dir,
            d1_neu,
            d2_neu,
            d4_neu,
            d1_neu_to_dir,
            d1_full,
        }
    }
}

/// L², H¹-seminorm and H²-seminorm of a discrete field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteNorms {
    pub l2: f64,
    pub h1_semi: f64,
    pub h2_semi: f64,
}

impl DiscreteNorms {
    /// `‖φ‖_{L²} + ‖φ''‖_{L²}`, the norm of `H²₁`.
    pub fn h2_1(&self) -> f64 {
        self.l2 + self.h2_semi
    }
}

pub fn discrete_norms(grid: &Grid, ops: &Operators, field: &[f64]) -> Result<DiscreteNorms> {
    match FieldKind::of(grid, field.len())? {
        FieldKind::Dirichlet => {
            let full = grid.extend_dirichlet(field);
            let dx = ops.d1_full.apply(&full);
            let dxx = ops.d2_dir.apply(field);
            Ok(DiscreteNorms {
                l2: grid.l2(field),
                h1_semi: grid.l2(&dx),
                h2_semi: grid.l2(&dxx),
            })
        }
        FieldKind::Neumann => {
            let dx = ops.d1_neu.apply(field);
            let dxx = ops.d2_neu.apply(field);
            Ok(DiscreteNorms {
                l2: grid.l2(field),
                h1_semi: grid.l2(&dx),
                h2_semi: grid.l2(&dxx),
            })
        }
    }
}
