//! Covariate matrices, kernel specifications, and Gram matrices.
//!
//! A kernel `K(x, x')` plus a covariate matrix yields the n-by-n Gram matrix
//! whose quadratic forms drive every worst-case variance computation in this
//! crate. Kernels may weight covariates through a matrix `Omega`, which is
//! either the identity, the inverse sample covariance (the Mahalanobis
//! weighting), or supplied explicitly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{eigh, SymMatrix};

/// Covariates for `n` units in `d` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    column_names: Vec<String>,
}

impl CovariateMatrix {
    pub fn new(data: Vec<Vec<f64>>, column_names: Vec<String>) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::invalid("covariate matrix must have at least one row"));
        }
        let d = data[0].len();
        if d == 0 {
            return Err(Error::invalid("covariate matrix must have at least one column"));
        }
        if column_names.len() != d {
            return Err(Error::invalid(format!(
                "{} column names for {d} columns",
                column_names.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in data.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "covariate row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "covariate ({i}, {j}) is not finite"
                    )));
                }
                flat.push(v);
            }
        }
        Ok(CovariateMatrix { n, d, data: flat, column_names })
    }

    /// Single-column matrix named `x1`.
    pub fn from_column(x: Vec<f64>) -> Result<Self> {
        CovariateMatrix::new(x.into_iter().map(|v| vec![v]).collect(), vec!["x1".into()])
    }

    /// Reads a CSV file with a header row; every column must parse as f64.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
        let column_names: Vec<String> =
            reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut data = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .enumerate()
                .map(|(j, field)| {
                    field.trim().parse::<f64>().map_err(|_| {
                        Error::invalid(format!(
                            "covariate file row {} column {} ({:?}) is not a number",
                            i + 1,
                            j + 1,
                            field
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            data.push(row);
        }
        CovariateMatrix::new(data, column_names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Column means.
    pub fn means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for i in 0..self.n {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        for acc in &mut m {
            *acc /= self.n as f64;
        }
        m
    }

    /// Sample covariance matrix (divisor n − 1).
    pub fn sample_covariance(&self) -> Result<SymMatrix> {
        if self.n < 2 {
            return Err(Error::invalid("sample covariance needs at least two rows"));
        }
        let means = self.means();
        Ok(SymMatrix::from_fn(self.d, |a, b| {
            let mut acc = 0.0;
            for i in 0..self.n {
                let row = self.row(i);
                acc += (row[a] - means[a]) * (row[b] - means[b]);
            }
            acc / (self.n as f64 - 1.0)
        }))
    }

    /// Raw bytes of the data in row-major order; feeds content hashing.
    pub(crate) fn data_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Covariate weighting matrix used inside kernels and balance criteria.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum OmegaSpec {
    #[default]
    Identity,
    /// Inverse of the sample covariance (Mahalanobis weighting).
    InverseCovariance,
    Explicit(SymMatrix),
}

/// Resolves an [`OmegaSpec`] against covariates into a concrete d-by-d
/// symmetric positive-semidefinite matrix.
pub fn resolve_omega(spec: &OmegaSpec, x: &CovariateMatrix) -> Result<SymMatrix> {
    let omega = match spec {
        OmegaSpec::Identity => SymMatrix::identity(x.d()),
        OmegaSpec::InverseCovariance => {
            let cov = x.sample_covariance()?;
            invert_spd(&cov).map_err(|e| match e {
                Error::NotPsd { min_eigenvalue } => Error::invalid(format!(
                    "sample covariance is singular or indefinite \
                     (min eigenvalue {min_eigenvalue:e}); cannot take its inverse"
                )),
                other => other,
            })?
        }
        OmegaSpec::Explicit(m) => {
            if m.dim() != x.d() {
                return Err(Error::invalid(format!(
                    "explicit Omega is {0}x{0} but covariates have {1} columns",
                    m.dim(),
                    x.d()
                )));
            }
            m.clone()
        }
    };
    // Omega must be PSD for the kernels and distances built on it.
    let min = eigh(&omega)?.values[0];
    if min < -1e-10 * omega.max_abs().max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(omega)
}

/// Inverse of a symmetric positive-definite matrix via eigendecomposition.
fn invert_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let decomp = eigh(m)?;
    let scale = decomp.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = decomp.values[0];
    if min <= 1e-12 * scale.max(1e-300) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let d = m.dim();
    Ok(SymMatrix::from_fn(d, |i, j| {
        let mut acc = 0.0;
        for k in 0..d {
            acc += decomp.vectors[k][i] * decomp.vectors[k][j] / decomp.values[k];
        }
        acc
    }))
}

/// Kernel families over covariate vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `<x, Omega x'>`.
    Linear,
    /// `(1 + <x, Omega x'>)^degree`.
    Polynomial { degree: u32 },
    /// `exp(-<x - x', Omega (x - x')>)`.
    Gaussian,
    /// Rank-one kernel `mu0 mu0^T` pinning a single mean-outcome vector;
    /// needs no covariates.
    Singleton { mu0: Vec<f64> },
    /// `((n-1)/n) I`: the reference class under which complete randomization
    /// is exactly minimax-optimal; needs no covariates.
    CrReference,
}

/// Full kernel specification: family, covariate weighting, and an optional
/// ridge `K + ridge * I` that keeps Gram matrices well-conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub omega: OmegaSpec,
    pub ridge: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        KernelSpec { kind, omega: OmegaSpec::Identity, ridge: 0.0 }
    }

    pub fn with_omega(mut self, omega: OmegaSpec) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }
}

/// An n-by-n kernel Gram matrix, validated symmetric PSD at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    matrix: SymMatrix,
}

impl GramMatrix {
    /// Wraps a caller-supplied Gram matrix, rejecting eigenvalues below
    /// `-1e-8 * max|entry|`.
    pub fn from_matrix(matrix: SymMatrix) -> Result<Self> {
        let min = eigh(&matrix)?.values[0];
        if min < -1e-8 * matrix.max_abs().max(1.0) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(GramMatrix { matrix })
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.dim()
    }
}

/// Builds the Gram matrix of `spec` over the rows of `x`.
///
/// Covariate-free kernels ([`KernelKind::Singleton`], [`KernelKind::CrReference`])
/// must use [`build_gram_covariate_free`]; passing them here is an error so a
/// covariate file is never silently ignored.
pub fn build_gram(spec: &KernelSpec, x: &CovariateMatrix) -> Result<GramMatrix> {
    if !(spec.ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be nonnegative, got {}", spec.ridge)));
    }
    let n = x.n();
    let mut matrix = match &spec.kind {
        KernelKind::Linear => {
            let omega = resolve_omega(&spec.omega, x)?;
            gram_from_inner(x, &omega, |ip| ip)
        }
        KernelKind::Polynomial { degree } => {
            if *degree == 0 {
                return Err(Error::invalid("polynomial kernel degree must be at least 1"));
            }
            let deg = *degree as i32;
            let omega = resolve_omega(&spec.omega, x)?;
            gram_from_inner(x, &omega, |ip| (1.0 + ip).powi(deg))
        }
        KernelKind::Gaussian => {
            let omega = resolve_omega(&spec.omega, x)?;
            SymMatrix::from_fn(n, |i, j| {
                let diff: Vec<f64> =
                    x.row(i).iter().zip(x.row(j)).map(|(a, b)| a - b).collect();
                (-omega.quad_form(&diff)).exp()
            })
        }
        KernelKind::Singleton { .. } | KernelKind::CrReference => {
            return Err(Error::invalid(
                "this kernel does not use covariates; build it from the sample size instead",
            ));
        }
    };
    if spec.ridge > 0.0 {
        matrix.add_diag(spec.ridge);
    }
    GramMatrix::from_matrix(matrix)
}

/// Builds the Gram matrix of a covariate-free kernel for `n` units.
pub fn build_gram_covariate_free(spec: &KernelSpec, n: usize) -> Result<GramMatrix> {
    if !(spec.ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be nonnegative, got {}", spec.ridge)));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let mut matrix = match &spec.kind {
        KernelKind::Singleton { mu0 } => {
            if mu0.len() != n {
                return Err(Error::invalid(format!(
                    "singleton kernel vector has length {}, expected {n}",
                    mu0.len()
                )));
            }
            if mu0.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("singleton kernel vector must be finite"));
            }
            SymMatrix::outer(mu0)
        }
        KernelKind::CrReference => {
            if n < 2 {
                return Err(Error::invalid("the reference kernel needs n >= 2"));
            }
            let mut m = SymMatrix::zeros(n);
            let v = (n as f64 - 1.0) / n as f64;
            for i in 0..n {
                m.set(i, i, v);
            }
            m
        }
        _ => {
            return Err(Error::invalid(
                "this kernel requires covariates; build it from a covariate matrix",
            ));
        }
    };
    if spec.ridge > 0.0 {
        matrix.add_diag(spec.ridge);
    }
    GramMatrix::from_matrix(matrix)
}

fn gram_from_inner(
    x: &CovariateMatrix,
    omega: &SymMatrix,
    f: impl Fn(f64) -> f64,
) -> SymMatrix {
    let n = x.n();
    // Precompute Omega x_i once per row.
    let wx: Vec<Vec<f64>> = (0..n).map(|i| omega.matvec(x.row(i))).collect();
    SymMatrix::from_fn(n, |i, j| {
        let ip: f64 = x.row(i).iter().zip(&wx[j]).map(|(a, b)| a * b).sum();
        f(ip)
    })
}
