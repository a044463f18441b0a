//! Covariate-balance rerandomization: accept a uniformly drawn balanced
//! assignment only when its Mahalanobis-type imbalance falls below a
//! threshold.
//!
//! The imbalance of an assignment is `D(W) = <X^T W, Omega X^T W>`. Under a
//! uniform balanced draw with equal arms, `X^T W` has covariance `n * S` for
//! the sample covariance `S`, so with `Omega = S^{-1}` the statistic `D/n` is
//! approximately chi-square with `d` degrees of freedom. A target acceptance
//! rate `p_a` therefore converts to the raw threshold
//! `n * chi2_inv_cdf(d, p_a)`.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::designs::{
    enumerate_representatives, random_balanced_assignment, Assignment, Design,
    MAX_ENUMERATION_N,
};
use crate::error::{Error, Result};
use crate::kernels::{resolve_omega, CovariateMatrix, OmegaSpec};
use crate::numerics::{chi2_inv_cdf, SymMatrix};

/// How the acceptance threshold is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum RerandThreshold {
    /// Raw bound on `D(W)` itself. `+inf` accepts the first draw.
    Explicit(f64),
    /// Target acceptance probability in `(0, 1 - 1e-12)`; converted to a raw
    /// bound via the chi-square approximation.
    TargetAcceptance(f64),
}

/// Rerandomization scheme: imbalance weighting plus acceptance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RerandSpec {
    pub omega: OmegaSpec,
    pub threshold: RerandThreshold,
    /// Draw budget for rejection sampling; defaults scale with the target
    /// acceptance rate.
    pub max_draws: Option<u64>,
}

/// One accepted draw and the number of proposals it took.
#[derive(Debug, Clone)]
pub struct RerandDraw {
    pub assignment: Assignment,
    pub draws_used: u64,
}

/// Squared imbalance `<X^T w, Omega X^T w>` of one assignment.
pub fn mahalanobis_distance(w: &Assignment, x: &CovariateMatrix, omega: &SymMatrix) -> Result<f64> {
    if w.n() != x.n() {
        return Err(Error::invalid(format!(
            "assignment length {} does not match {} covariate rows",
            w.n(),
            x.n()
        )));
    }
    if omega.dim() != x.d() {
        return Err(Error::invalid(format!(
            "Omega is {0}x{0} but covariates have {1} columns",
            omega.dim(),
            x.d()
        )));
    }
    let mut z = vec![0.0; x.d()];
    for i in 0..x.n() {
        let s = w.sign(i) as f64;
        for (acc, v) in z.iter_mut().zip(x.row(i)) {
            *acc += s * v;
        }
    }
    Ok(omega.quad_form(&z))
}

/// Normalized acceptance bound for a target acceptance rate: the chi-square
/// quantile `F^{-1}_{chi2_d}(p_a)`. This is the bound on `D(W) / n`; multiply
/// by `n` for the raw `D(W)` scale used by the samplers here.
pub fn threshold_from_pa(d: u32, p_a: f64) -> Result<f64> {
    if !(p_a > 0.0 && p_a < 1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "target acceptance rate must lie in (0, 1 - 1e-12), got {p_a}"
        )));
    }
    chi2_inv_cdf(d, p_a)
}

/// Raw acceptance bound on `D(W)` implied by the spec for these covariates.
pub fn resolve_threshold(spec: &RerandSpec, x: &CovariateMatrix) -> Result<f64> {
    match spec.threshold {
        RerandThreshold::Explicit(a) => {
            if a.is_nan() || a < 0.0 {
                return Err(Error::invalid(format!(
                    "explicit threshold must be nonnegative, got {a}"
                )));
            }
            Ok(a)
        }
        RerandThreshold::TargetAcceptance(p_a) => {
            let d = u32::try_from(x.d())
                .map_err(|_| Error::invalid("too many covariate columns"))?;
            Ok(x.n() as f64 * threshold_from_pa(d, p_a)?)
        }
    }
}

fn default_max_draws(spec: &RerandSpec) -> u64 {
    match spec.threshold {
        // Expect 1/p_a proposals per acceptance; budget 100x that.
        RerandThreshold::TargetAcceptance(p_a) => (100.0 / p_a).ceil() as u64,
        RerandThreshold::Explicit(_) => 1_000_000,
    }
}

/// Rejection-samples one assignment: uniform balanced proposals until
/// `D(W) <= a`. Deterministic in `seed`.
pub fn sample_rerandomization(
    spec: &RerandSpec,
    x: &CovariateMatrix,
    seed: u64,
) -> Result<RerandDraw> {
    let n = x.n();
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "rerandomization needs an even sample size of at least 2, got {n}"
        )));
    }
    let omega = resolve_omega(&spec.omega, x)?;
    let a = resolve_threshold(spec, x)?;
    let budget = spec.max_draws.unwrap_or_else(|| default_max_draws(spec)).max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut min_distance = f64::INFINITY;
    for draw in 1..=budget {
        let w = random_balanced_assignment(n, &mut rng);
        let dist = mahalanobis_distance(&w, x, &omega)?;
        if dist <= a {
            return Ok(RerandDraw { assignment: w, draws_used: draw });
        }
        min_distance = min_distance.min(dist);
    }
    Err(Error::DrawsExhausted { draws: budget, min_distance })
}

/// The exact rerandomization design: uniform over every balanced pair whose
/// imbalance passes the threshold. Enumeration-guarded; errors with the
/// smallest observed distance when no pair passes.
pub fn exact_rerandomization_design(spec: &RerandSpec, x: &CovariateMatrix) -> Result<Design> {
    let n = x.n();
    if n > MAX_ENUMERATION_N {
        return Err(Error::invalid(format!(
            "the exact rerandomization design enumerates all assignments and \
             is limited to n <= {MAX_ENUMERATION_N}, got {n}"
        )));
    }
    let omega = resolve_omega(&spec.omega, x)?;
    let a = resolve_threshold(spec, x)?;
    let mut accepted = Vec::new();
    let mut min_distance = f64::INFINITY;
    for w in enumerate_representatives(n)? {
        let dist = mahalanobis_distance(&w, x, &omega)?;
        if dist <= a {
            accepted.push((w, 1.0));
        } else {
            min_distance = min_distance.min(dist);
        }
    }
    if accepted.is_empty() {
        return Err(Error::EmptyAcceptance { min_distance });
    }
    Design::from_support(accepted)
}
