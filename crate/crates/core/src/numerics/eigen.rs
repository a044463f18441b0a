//! Symmetric eigendecomposition via Householder tridiagonalization followed
//! by the implicit-shift QL iteration, plus the derived operations the rest of
//! the crate needs (dominant eigenpair, positive-semidefinite square root).

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Full eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigh {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Dominant eigenvalue and a unit eigenvector for it.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

const QL_MAX_SWEEPS: usize = 50;

/// Householder reduction to tridiagonal form, accumulating the orthogonal
/// transform in `a`. On return `d` holds the diagonal and `e[1..]` the
/// subdiagonal.
fn tred2(a: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = a.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i][k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    a[j][i] = a[i][j] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[j][k] * a[i][k];
                    }
                    for k in (j + 1)..=l {
                        g_acc += a[k][j] * a[i][k];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[i][j];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * e[k] + g * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[i][k] * a[k][j];
                }
                for k in 0..i {
                    a[k][j] -= g * a[k][i];
                }
            }
        }
        d[i] = a[i][i];
        a[i][i] = 1.0;
        for j in 0..i {
            a[j][i] = 0.0;
            a[i][j] = 0.0;
        }
    }
}

/// QL iteration with implicit shifts on a tridiagonal matrix, rotating the
/// accumulated transform `z` along. Errors if any eigenvalue fails to
/// deflate within [`QL_MAX_SWEEPS`] sweeps.
fn tqli(d: &mut [f64], e: &mut [f64], z: &mut [Vec<f64>]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_SWEEPS {
                return Err(Error::NonConvergence(format!(
                    "eigenvalue {l} did not deflate in {QL_MAX_SWEEPS} QL sweeps"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Eigendecomposition of `m`; eigenvalues ascending, eigenvectors unit-norm.
pub fn eigh(m: &SymMatrix) -> Result<Eigh> {
    let n = m.dim();
    let mut a = m.to_rows();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        return Ok(Eigh { values: vec![a[0][0]], vectors: vec![vec![1.0]] });
    }
    tred2(&mut a, &mut d, &mut e);
    tqli(&mut d, &mut e, &mut a)?;
    // Columns of `a` are the eigenvectors; sort ascending by eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("eigenvalues are finite"));
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &k in &order {
        values.push(d[k]);
        let mut v: Vec<f64> = (0..n).map(|i| a[i][k]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        vectors.push(v);
    }
    Ok(Eigh { values, vectors })
}

/// Dominant (largest) eigenpair of `m`, with a residual check
/// `||M u - lambda u|| <= tol * max(1, |lambda|)`.
pub fn top_eigenpair(m: &SymMatrix, tol: f64) -> Result<EigenPair> {
    let decomp = eigh(m)?;
    let k = decomp.values.len() - 1;
    let value = decomp.values[k];
    let vector = decomp.vectors[k].clone();
    let mv = m.matvec(&vector);
    let residual: f64 = mv
        .iter()
        .zip(&vector)
        .map(|(a, b)| (a - value * b) * (a - value * b))
        .sum::<f64>()
        .sqrt();
    if residual > tol * value.abs().max(1.0) {
        return Err(Error::NonConvergence(format!(
            "dominant eigenpair residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(EigenPair { value, vector })
}

/// Symmetric positive-semidefinite square root.
///
/// Eigenvalues down to `-1e-6 * max|lambda|` are treated as rounding noise
/// and clipped to zero; anything more negative is an error.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let decomp = eigh(m)?;
    let scale = decomp
        .values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = decomp.values[0];
    if min < -1e-6 * scale.max(1e-300) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let n = m.dim();
    let roots: Vec<f64> = decomp.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(SymMatrix::from_fn(n, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            acc += roots[k] * decomp.vectors[k][i] * decomp.vectors[k][j];
        }
        acc
    }))
}
