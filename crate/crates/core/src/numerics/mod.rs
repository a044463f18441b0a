//! Dense symmetric linear algebra and scalar special functions.
//!
//! Everything here is sized for "desk scale" problems (matrix dimension up to
//! a few hundred), so we use straightforward O(n^3) dense algorithms and keep
//! full rather than packed storage.

mod eigen;
mod simplex;
mod special;

pub use eigen::{eigh, psd_sqrt, top_eigenpair, EigenPair, Eigh};
pub use simplex::project_capped_simplex;
pub use special::{chi2_cdf, chi2_inv_cdf, ln_gamma, reg_lower_gamma};

use crate::error::{Error, Result};

/// Dense symmetric matrix with full row-major storage.
///
/// Symmetry is enforced structurally: every constructor and mutator writes
/// both `(i, j)` and `(j, i)`, so the two entries are always bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds the matrix from `f(i, j)`, evaluated once per unordered pair
    /// (`i <= j`) and mirrored, so the result is exactly symmetric even when
    /// `f` itself is only symmetric up to rounding.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Validates squareness and exact (bitwise) symmetry of caller-supplied
    /// rows. Entries must be finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::invalid("matrix must have at least one row"));
        }
        let mut m = SymMatrix::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid(format!("entry ({i}, {j}) is not finite")));
                }
                m.data[i * dim + j] = v;
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if m.data[i * dim + j] != m.data[j * dim + i] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Rank-one matrix `v v^T`.
    pub fn outer(v: &[f64]) -> Self {
        SymMatrix::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Quadratic form `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for i in 0..self.dim {
            let row = self.row(i);
            let mut rx = 0.0;
            for j in 0..self.dim {
                rx += row[j] * x[j];
            }
            acc += x[i] * rx;
        }
        acc
    }

    /// Adds `lambda` to every diagonal entry in place.
    pub fn add_diag(&mut self, lambda: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += lambda;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds `s * other` in place.
    pub fn add_scaled(&mut self, s: f64, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Sandwich product `self * inner * self`, filled from the upper triangle
    /// so the result is exactly symmetric.
    pub fn sandwich(&self, inner: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, inner.dim);
        let n = self.dim;
        // First inner * self (general dense product), then contract with rows
        // of self for the upper triangle only.
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = inner.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = self.row(k);
                let out = &mut tmp[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += a * row[j];
                }
            }
        }
        SymMatrix::from_fn(n, |i, j| {
            let row = self.row(i);
            let col = &tmp[..];
            let mut acc = 0.0;
            for k in 0..n {
                acc += row[k] * col[k * n + j];
            }
            acc
        })
    }

    /// Largest absolute entry; cheap scale estimate used in tolerances.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copies into a `Vec<Vec<f64>>` (used by the eigensolver's workspace).
    pub(crate) fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Solves the dense square system `A x = b` by Gaussian elimination with
/// scaled partial pivoting, so badly row-scaled systems (barrier KKT
/// matrices, say) do not trip the singularity test. `a` is row-major and
/// consumed as the workspace.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.len();
    if n == 0 || b.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(Error::invalid("linear system shape mismatch"));
    }
    let mut row_scale = Vec::with_capacity(n);
    for row in &a {
        let s = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid("linear system is singular"));
        }
        row_scale.push(s);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                let ri = a[i][col].abs() / row_scale[i];
                let rj = a[j][col].abs() / row_scale[j];
                ri.partial_cmp(&rj).expect("pivot ratios are finite")
            })
            .expect("nonempty range");
        if a[pivot][col].abs() <= 1e-14 * row_scale[pivot] {
            return Err(Error::invalid("linear system is singular"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        row_scale.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}
