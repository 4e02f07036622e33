//! Banded matrices and a partial-pivoting band LU with transposed solves.

use crate::error::{Error, Result};

/// Rectangular banded matrix.
///
/// Row `i` may hold nonzeros in columns `i + offset - kl ..= i + offset + ku`.
/// Square operators use `offset = 0`; the `offset` lets a block such as the
/// interior-row restriction of a full-node stencil stay banded.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    rows: usize,
    cols: usize,
    offset: isize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(rows: usize, cols: usize, offset: isize, kl: usize, ku: usize) -> Self {
        Banded {
            rows,
            cols,
            offset,
            kl,
            ku,
            data: vec![0.0; rows * (kl + ku + 1)],
        }
    }

    pub fn square(n: usize, kl: usize, ku: usize) -> Self {
        Self::zeros(n, n, 0, kl, ku)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::square(n, 0, 0);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.rows || j >= self.cols {
            return None;
        }
        let rel = j as isize - (i as isize + self.offset) + self.kl as isize;
        if rel < 0 || rel as usize >= self.width() {
            None
        } else {
            Some(i * self.width() + rel as usize)
        }
    }

    /// Column range touched by row `i`, clipped to the matrix.
    fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        let centre = i as isize + self.offset;
        let lo = (centre - self.kl as isize).max(0) as usize;
        let hi = (centre + self.ku as isize + 1).clamp(0, self.cols as isize) as usize;
        lo..hi.max(lo)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Panics if `(i, j)` falls outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band"));
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band"));
        self.data[s] += v;
    }

    pub fn scale_rows(&mut self, factors: &[f64]) {
        assert_eq!(factors.len(), self.rows);
        let w = self.width();
        for (row, f) in self.data.chunks_mut(w).zip(factors) {
            row.iter_mut().for_each(|a| *a *= f);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "domain size mismatch");
        (0..self.rows)
            .map(|i| self.row_span(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "codomain size mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            for j in self.row_span(i) {
                out[j] += self.get(i, j) * yi;
            }
        }
        out
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row_span(i).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// `alpha * self + beta * other` for square matrices of equal size.
    pub fn combine(&self, alpha: f64, other: &Banded, beta: f64) -> Banded {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        assert_eq!((self.offset, other.offset), (0, 0));
        let kl = self.kl.max(other.kl);
        let ku = self.ku.max(other.ku);
        let mut out = Banded::zeros(self.rows, self.cols, 0, kl, ku);
        for i in 0..self.rows {
            for j in self.row_span(i) {
                out.add(i, j, alpha * self.get(i, j));
            }
            for j in other.row_span(i) {
                out.add(i, j, beta * other.get(i, j));
            }
        }
        out
    }

    pub fn factor(&self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// LU factorization `P A = L U` of a square band matrix with row pivoting.
///
/// Pivoting widens the upper band of `U` to `kl + ku`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    lu: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn new(a: &Banded) -> Result<Self> {
        assert_eq!(a.rows, a.cols, "band LU needs a square matrix");
        assert_eq!(a.offset, 0);
        let n = a.rows;
        let (kl, ku) = (a.kl, a.ku);
        let mut f = BandLu {
            n,
            kl,
            ku,
            lu: vec![0.0; n * (2 * kl + ku + 1)],
            ipiv: vec![0; n],
        };
        for i in 0..n {
            for j in a.row_span(i) {
                let s = f.slot(i, j);
                f.lu[s] = a.get(i, j);
            }
        }
        let scale = a.norm_inf().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = f.lu[f.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = f.lu[f.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 {
                return Err(Error::Singular { row: k });
            }
            f.ipiv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (sk, sp) = (f.slot(k, j), f.slot(p, j));
                    f.lu.swap(sk, sp);
                }
            }
            let pivot = f.lu[f.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = f.slot(i, k);
                let l = f.lu[sik] / pivot;
                f.lu[sik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let (sij, skj) = (f.slot(i, j), f.slot(k, j));
                        f.lu[sij] -= l * f.lu[skj];
                    }
                }
            }
        }
        Ok(f)
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let w = 2 * self.kl + self.ku + 1;
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * w + (j + self.kl - i)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.lu[self.slot(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + self.kl + self.ku).min(n - 1) {
                acc -= self.lu[self.slot(i, j)] * b[j];
            }
            b[i] = acc / self.lu[self.slot(i, i)];
        }
    }

    /// Solves `Aᵀ y = c` in place.
    pub fn solve_transpose_in_place(&self, c: &mut [f64]) {
        let n = self.n;
        assert_eq!(c.len(), n);
        // Uᵀ z = c
        for i in 0..n {
            let mut acc = c[i];
            let first = i.saturating_sub(self.kl + self.ku);
            for j in first..i {
                acc -= self.lu[self.slot(j, i)] * c[j];
            }
            c[i] = acc / self.lu[self.slot(i, i)];
        }
        // y = P₀ᵀE₀ᵀ … P_{n-1}ᵀE_{n-1}ᵀ z
        for k in (0..n).rev() {
            let mut acc = 0.0;
            for i in k + 1..=(k + self.kl).min(n - 1) {
                acc += self.lu[self.slot(i, k)] * c[i];
            }
            c[k] -= acc;
            let p = self.ipiv[k];
            if p != k {
                c.swap(k, p);
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let mut y = c.to_vec();
        self.solve_transpose_in_place(&mut y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense Gaussian elimination with partial pivoting, independent of the band code.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..a[0].len())
            .map(|j| a.iter().map(|r| r[j]).collect())
            .collect()
    }

    fn random_band(n: usize, kl: usize, ku: usize, vals: &[f64]) -> Banded {
        let mut m = Banded::square(n, kl, ku);
        let mut it = vals.iter().cycle();
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                m.set(i, j, *it.next().unwrap());
            }
        }
        m
    }

    #[test]
    fn small_pivoting_case() {
        // zero leading pivot forces a row swap
        let mut m = Banded::square(3, 1, 1);
        m.set(0, 0, 0.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(1, 2, 1.0);
        m.set(2, 1, 3.0);
        m.set(2, 2, 1.0);
        let lu = m.factor().unwrap();
        let b = [2.0, 3.0, 4.0];
        let x = lu.solve(&b);
        let r = m.apply(&x);
        for (ri, bi) in r.iter().zip(b) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = Banded::square(4, 1, 1);
        assert!(matches!(m.factor(), Err(Error::Singular { row: 0 })));
    }

    #[test]
    fn offset_block_apply_matches_dense() {
        let mut m = Banded::zeros(3, 5, 1, 1, 1);
        for i in 0..3 {
            m.set(i, i, -1.0);
            m.set(i, i + 2, 1.0);
        }
        let x = [1.0, 2.0, 4.0, 8.0, 16.0];
        assert_eq!(m.apply(&x), vec![3.0, 6.0, 12.0]);
        let d = m.to_dense();
        let y = [1.0, -1.0, 0.5];
        let t = m.apply_transpose(&y);
        for j in 0..5 {
            let e: f64 = (0..3).map(|i| d[i][j] * y[i]).sum();
            assert_eq!(t[j], e);
        }
    }

    proptest! {
        #[test]
        fn band_lu_matches_dense(
            n in 5usize..24,
            kl in 0usize..5,
            ku in 0usize..5,
            vals in prop::collection::vec(-1.0f64..1.0, 40),
            rhs in prop::collection::vec(-1.0f64..1.0, 24),
        ) {
            let mut m = random_band(n, kl, ku, &vals);
            for i in 0..n {
                // keep it comfortably nonsingular without making pivoting trivial
                m.add(i, i, 0.5 + 0.1 * i as f64);
            }
            let b = &rhs[..n];
            let lu = m.factor().unwrap();
            let x = lu.solve(b);
            let xd = dense_solve(m.to_dense(), b.to_vec());
            for (u, v) in x.iter().zip(&xd) {
                prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
            }
            let y = lu.solve_transpose(b);
            let yd = dense_solve(transpose(&m.to_dense()), b.to_vec());
            for (u, v) in y.iter().zip(&yd) {
                prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
            }
        }
    }
}
