//! Worst-case design risk over a kernel ball, and the resulting prediction
//! for the mean squared error of the difference-in-means estimator.
//!
//! For a design with second-moment matrix `Q` and a mean-outcome class
//! `{mu = K^{1/2} v : <v, K v> <= c}`, the worst case of `E[<W, mu>^2] =
//! mu^T Q mu` equals `c * lambda_max(K^{1/2} Q K^{1/2})`, attained at `mu`
//! proportional to `K^{1/2} u` for the dominant eigenvector `u`.

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::jsonfmt::{f64_array, f64_repr};
use crate::kernels::GramMatrix;
use crate::numerics::{psd_sqrt, top_eigenpair};

/// Worst-case risk of a design over a kernel ball, with the mean vector
/// attaining it.
#[derive(Debug, Clone)]
pub struct RiskReport {
    /// `c * max(0, lambda_max(K^{1/2} Q K^{1/2}))`.
    pub minimax_risk: f64,
    /// A mean-centered vector attaining the worst case, scaled to sit on the
    /// boundary `<v, K v> = c` of the class.
    pub witness_mu: Vec<f64>,
    /// Probability of the heaviest `{W, -W}` pair in the design.
    pub max_pair_probability: f64,
    /// Radius parameter the risk was evaluated at.
    pub c: f64,
}

/// Average squared imbalance `Σ_pairs p · <W, mu - mean(mu)>^2` of a design
/// against a fixed mean vector. Centering does not change the value on
/// balanced assignments and keeps the reported numbers scale-free.
pub fn b_value(design: &Design, mu: &[f64]) -> Result<f64> {
    let n = design.n();
    if mu.len() != n {
        return Err(Error::invalid(format!(
            "mean vector has length {}, expected {n}",
            mu.len()
        )));
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mean vector must be finite"));
    }
    let mean = mu.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = mu.iter().map(|v| v - mean).collect();
    match design.pairs() {
        Some(pairs) => Ok(pairs
            .iter()
            .map(|pair| {
                let d = pair.assignment.dot(&centered);
                pair.probability * d * d
            })
            .sum()),
        // Uniform over balanced assignments: mu^T A mu with
        // A = (n/(n-1)) (I - E/n), i.e. (n/(n-1)) ||mu - mean||^2.
        None => {
            let ss: f64 = centered.iter().map(|v| v * v).sum();
            Ok(n as f64 / (n as f64 - 1.0) * ss)
        }
    }
}

/// Evaluates the worst-case risk of `design` over the radius-`c` ball of the
/// kernel class given by `gram`.
pub fn minimax_risk(design: &Design, gram: &GramMatrix, c: f64) -> Result<RiskReport> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("class radius c must be positive, got {c}")));
    }
    let n = design.n();
    if gram.n() != n {
        return Err(Error::invalid(format!(
            "Gram matrix is {0}x{0} but the design has n = {n}",
            gram.n()
        )));
    }
    let root = psd_sqrt(gram.matrix())?;
    let q = design.q_matrix();
    let m = root.sandwich(&q);
    let pair = top_eigenpair(&m, 1e-10)?;
    let lambda = pair.value.max(0.0);

    // Witness: mu = sqrt(c) * K^{1/2} u lies in the class boundary and
    // attains mu^T Q mu = c * lambda. Mean-center for presentation only.
    let mut witness = root.matvec(&pair.vector);
    for v in &mut witness {
        *v *= c.sqrt();
    }
    let mean = witness.iter().sum::<f64>() / n as f64;
    for v in &mut witness {
        *v -= mean;
    }

    Ok(RiskReport {
        minimax_risk: c * lambda,
        witness_mu: witness,
        max_pair_probability: design.max_pair_probability(),
        c,
    })
}

impl RiskReport {
    pub fn to_json_string(&self) -> String {
        format!(
            "{{\"schema\":\"risk/v1\",\"minimax_risk\":{},\"witness_mu\":{},\"max_pair_probability\":{},\"c\":{}}}\n",
            f64_repr(self.minimax_risk),
            f64_array(&self.witness_mu),
            f64_repr(self.max_pair_probability),
            f64_repr(self.c),
        )
    }
}

/// The three terms of the estimator's mean squared error under a fixed mean
/// vector: design-driven imbalance, idiosyncratic noise, and the sampling
/// variability of the in-sample average treatment effect.
#[derive(Debug, Clone)]
pub struct MseDecomposition {
    pub design_term: f64,
    pub noise_term: f64,
    pub sate_term: f64,
    pub total: f64,
}

/// Predicts the mean squared error of the difference-in-means estimator
/// around the population effect: `B(design, mu)/n^2 + noise_var_sum/n^2 +
/// sate_var`.
pub fn predict_mse(
    design: &Design,
    mu: &[f64],
    noise_var_sum: f64,
    sate_var: f64,
) -> Result<MseDecomposition> {
    if !(noise_var_sum >= 0.0) {
        return Err(Error::invalid(format!(
            "noise variance sum must be nonnegative, got {noise_var_sum}"
        )));
    }
    if !(sate_var >= 0.0) {
        return Err(Error::invalid(format!(
            "sample-effect variance must be nonnegative, got {sate_var}"
        )));
    }
    let n2 = (design.n() * design.n()) as f64;
    let design_term = b_value(design, mu)? / n2;
    let noise_term = noise_var_sum / n2;
    let total = design_term + noise_term + sate_var;
    Ok(MseDecomposition { design_term, noise_term, sate_term: sate_var, total })
}
