//! Compressed-row generator matrices: off-diagonal rates in CSR form and
//! the diagonal (minus the exit rate) stored apart.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a generator from jump rates `(from, to, rate)`. Duplicate
    /// transitions are summed; self-loops and zero rates are dropped and the
    /// diagonal is set to minus the row's exit rate.
    pub fn from_rates(dim: usize, mut rates: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, r) in &rates {
            if i >= dim || j >= dim {
                return Err(Error::InvalidParameter(format!(
                    "transition {i}->{j} outside a {dim}-state space"
                )));
            }
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter(format!("rate {r} on {i}->{j}")));
            }
        }
        rates.retain(|&(i, j, r)| i != j && r != 0.0);
        rates.sort_by_key(|r| (r.0, r.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(rates.len());
        let mut vals: Vec<f64> = Vec::with_capacity(rates.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, r) in rates {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += r;
            } else {
                cols.push(j as u32);
                vals.push(r);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self {
            dim,
            row_ptr,
            cols,
            vals,
            diag: vec![0.0; dim],
        };
        m.reset_diagonal();
        Ok(m)
    }

    /// Assembles rows produced in order by `row(i, &mut buf)`, which pushes
    /// `(to, rate)` pairs. Faster than [`SparseMatrix::from_rates`] for large
    /// lattice generators.
    pub(crate) fn from_row_fn<F: FnMut(usize, &mut Vec<(u32, f64)>)>(
        dim: usize,
        mut row: F,
    ) -> Self {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut buf = Vec::new();
        for i in 0..dim {
            buf.clear();
            row(i, &mut buf);
            buf.retain(|&(j, r)| j as usize != i && r != 0.0);
            buf.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < buf.len() {
                let (j, mut r) = buf[k];
                k += 1;
                while k < buf.len() && buf[k].0 == j {
                    r += buf[k].1;
                    k += 1;
                }
                cols.push(j);
                vals.push(r);
            }
            row_ptr.push(cols.len());
        }
        let mut m = Self {
            dim,
            row_ptr,
            cols,
            vals,
            diag: vec![0.0; dim],
        };
        m.reset_diagonal();
        m
    }

    fn reset_diagonal(&mut self) {
        for i in 0..self.dim {
            self.diag[i] = -self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                .iter()
                .sum::<f64>();
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal `(to, rate)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&j, &v)| (j as usize, v))
    }

    /// Entry `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// Exit rate of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.diag[i]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, &d| m.max(-d))
    }

    /// `(L f)(x) = Σ_y L(x,y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[i] * f[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * f[self.cols[k] as usize];
            }
            *o = acc;
        }
    }

    /// `(μ L)(y) = Σ_x μ(x) L(x,y)`.
    pub fn apply_left(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_left_into(mu, &mut out);
        out
    }

    pub fn apply_left_into(&self, mu: &[f64], out: &mut [f64]) {
        for (o, (&m, &d)) in out.iter_mut().zip(mu.iter().zip(&self.diag)) {
            *o = m * d;
        }
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k] as usize] += m * self.vals[k];
            }
        }
    }

    /// `α A + β B` for generators on the same space.
    pub fn linear_combination(alpha: f64, a: &Self, beta: f64, b: &Self) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch {
                expected: a.dim,
                got: b.dim,
            });
        }
        Ok(Self::from_row_fn(a.dim, |i, buf| {
            buf.extend(a.row(i).map(|(j, v)| (j as u32, alpha * v)));
            buf.extend(b.row(i).map(|(j, v)| (j as u32, beta * v)));
        }))
    }

    /// Weighted transpose `D^{-1} Lᵀ D`, the adjoint of `L` in `L²(w)`.
    /// Its rows need not sum to zero, so the diagonal is copied, not rebuilt.
    pub fn weighted_adjoint(&self, w: &[f64]) -> Result<DenseLike> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParameter(
                "adjoint weights must be positive".into(),
            ));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.dim];
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                rows[j].push((i as u32, w[i] * v / w[j]));
            }
        }
        for r in rows.iter_mut() {
            r.sort_by_key(|&(j, _)| j);
        }
        Ok(DenseLike {
            rows,
            diag: self.diag.clone(),
        })
    }
}

/// Row-list operator without the generator constraint (used for adjoints).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLike {
    pub rows: Vec<Vec<(u32, f64)>>,
    pub diag: Vec<f64>,
}

impl DenseLike {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                self.diag[i] * f[i] + r.iter().map(|&(j, v)| v * f[j as usize]).sum::<f64>()
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        match self.rows[i].binary_search_by_key(&(j as u32), |&(c, _)| c) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => 0.0,
        }
    }

    /// Largest entrywise difference from another operator.
    pub fn max_abs_diff(&self, other: &DenseLike) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            worst = worst.max((self.diag[i] - other.diag[i]).abs());
            for &(j, v) in &self.rows[i] {
                worst = worst.max((v - other.get(i, j as usize)).abs());
            }
            for &(j, v) in &other.rows[i] {
                worst = worst.max((v - self.get(i, j as usize)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m =
            SparseMatrix::from_rates(2, vec![(0, 1, 1.0), (0, 1, 1.0), (1, 0, 3.0), (1, 1, 5.0)])
                .unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(0, 0), -2.0);
        assert_eq!(m.get(1, 1), -3.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn left_and_right_products() {
        let m = SparseMatrix::from_rates(3, vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5)]).unwrap();
        let f = [1.0, 2.0, 4.0];
        assert_eq!(m.apply(&f), vec![1.0, 4.0, -1.5]);
        let mu = [0.5, 0.25, 0.25];
        let l = m.apply_left(&mu);
        assert!(l.iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(l, vec![-0.5 + 0.125, 0.5 - 0.5, 0.5 - 0.125]);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(SparseMatrix::from_rates(2, vec![(0, 1, -1.0)]).is_err());
        assert!(SparseMatrix::from_rates(2, vec![(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn weighted_adjoint_duality() {
        let m =
            SparseMatrix::from_rates(3, vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 0.3)])
                .unwrap();
        let w = [0.2, 0.3, 0.5];
        let adj = m.weighted_adjoint(&w).unwrap();
        let f = [0.3, -1.0, 2.0];
        let g = [1.5, 0.7, -0.2];
        let lf = m.apply(&f);
        let ag = adj.apply(&g);
        let lhs: f64 = (0..3).map(|i| w[i] * lf[i] * g[i]).sum();
        let rhs: f64 = (0..3).map(|i| w[i] * f[i] * ag[i]).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
