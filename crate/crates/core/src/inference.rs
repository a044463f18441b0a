//! Fisher randomization tests over a design's own assignment distribution.
//!
//! The p-value of an observed assignment is the design probability of drawing
//! an assignment whose test statistic is at least as extreme. All statistics
//! here are sign-symmetric (`s(W, y) = s(-W, y)`) not just mathematically but
//! bit-for-bit: swapping the arms swaps the exact intermediate quantities, so
//! a pair's statistic can be computed on its canonical representative.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::designs::{Assignment, Design};
use crate::error::{Error, Result};
use crate::jsonfmt::f64_repr;

/// Test statistics; all are arm-symmetric absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatistic {
    /// |difference of arm means|, i.e. |(2/n) <W, y>|.
    AbsMeanDiff,
    /// |two-sample t| with pooled variance.
    AbsTPooled,
    /// |two-sample t| with per-arm variances (Welch).
    AbsTWelch,
}

impl TestStatistic {
    pub fn name(self) -> &'static str {
        match self {
            TestStatistic::AbsMeanDiff => "abs_mean_diff",
            TestStatistic::AbsTPooled => "abs_t_pooled",
            TestStatistic::AbsTWelch => "abs_t_welch",
        }
    }
}

/// Evaluates `kind` on one assignment and outcome vector.
///
/// Degenerate variances follow the usual convention: zero spread with a
/// nonzero mean difference is infinitely extreme, zero spread with zero
/// difference is not extreme at all.
pub fn statistic(kind: TestStatistic, w: &Assignment, y: &[f64]) -> Result<f64> {
    let n = w.n();
    if y.len() != n {
        return Err(Error::invalid(format!(
            "outcome vector has length {}, expected {n}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("outcomes must be finite"));
    }
    match kind {
        TestStatistic::AbsMeanDiff => {
            let dot = w.dot(y);
            Ok((2.0 / n as f64 * dot).abs())
        }
        TestStatistic::AbsTPooled | TestStatistic::AbsTWelch => {
            if n < 4 {
                return Err(Error::invalid(
                    "t statistics need at least two units per arm",
                ));
            }
            let m = (n / 2) as f64;
            let (mut sum_t, mut sum_c) = (0.0, 0.0);
            for (i, &v) in y.iter().enumerate() {
                if w.sign(i) == 1 {
                    sum_t += v;
                } else {
                    sum_c += v;
                }
            }
            let mean_t = sum_t / m;
            let mean_c = sum_c / m;
            let (mut ss_t, mut ss_c) = (0.0, 0.0);
            for (i, &v) in y.iter().enumerate() {
                if w.sign(i) == 1 {
                    ss_t += (v - mean_t) * (v - mean_t);
                } else {
                    ss_c += (v - mean_c) * (v - mean_c);
                }
            }
            let num = mean_t - mean_c;
            let se = match kind {
                TestStatistic::AbsTPooled => {
                    let s2 = (ss_t + ss_c) / (n as f64 - 2.0);
                    (s2 * (2.0 / m)).sqrt()
                }
                _ => ((ss_t / (m - 1.0)) / m + (ss_c / (m - 1.0)) / m).sqrt(),
            };
            if se == 0.0 {
                Ok(if num == 0.0 { 0.0 } else { f64::INFINITY })
            } else {
                Ok((num / se).abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    MonteCarlo,
}

/// Outcome of a randomization test.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub p_value: f64,
    /// Observed statistic value (may be infinite in degenerate cases).
    pub statistic: f64,
    pub kind: TestStatistic,
    pub method: TestMethod,
    /// Monte Carlo draws, if that method was used.
    pub draws: Option<u64>,
}

impl TestResult {
    pub fn to_json_string(&self) -> String {
        let method = match self.method {
            TestMethod::Exact => "exact",
            TestMethod::MonteCarlo => "monte_carlo",
        };
        let draws = match self.draws {
            Some(d) => d.to_string(),
            None => "null".to_string(),
        };
        format!(
            "{{\"schema\":\"test/v1\",\"p_value\":{},\"statistic\":{},\"statistic_kind\":\"{}\",\"method\":\"{method}\",\"draws\":{draws}}}\n",
            f64_repr(self.p_value),
            f64_repr(self.statistic),
            self.kind.name(),
        )
    }
}

/// Exact randomization p-value: total probability of pairs at least as
/// extreme as the observed assignment. The observed assignment must lie in
/// the design's support.
pub fn p_value_exact(
    design: &Design,
    w_obs: &Assignment,
    y: &[f64],
    kind: TestStatistic,
) -> Result<TestResult> {
    if w_obs.n() != design.n() {
        return Err(Error::invalid(format!(
            "observed assignment has length {}, design has n = {}",
            w_obs.n(),
            design.n()
        )));
    }
    let pairs = design.pairs().ok_or_else(|| {
        Error::invalid(
            "the exact test needs an explicit design; use the Monte Carlo test \
             for implicit complete randomization",
        )
    })?;
    let canonical = w_obs.canonical();
    if !pairs.iter().any(|p| p.assignment == canonical) {
        return Err(Error::invalid(
            "observed assignment is outside the design's support",
        ));
    }
    let s_obs = statistic(kind, w_obs, y)?;
    let mut p = 0.0;
    for pair in pairs {
        if statistic(kind, &pair.assignment, y)? >= s_obs {
            p += pair.probability;
        }
    }
    Ok(TestResult {
        p_value: p.min(1.0),
        statistic: s_obs,
        kind,
        method: TestMethod::Exact,
        draws: None,
    })
}

/// Monte Carlo randomization p-value with the add-one estimator
/// `(1 + #{s >= s_obs}) / (1 + draws)`. Each draw uses its own RNG stream,
/// so results are reproducible for a given seed independent of evaluation
/// order.
pub fn p_value_mc(
    design: &Design,
    w_obs: &Assignment,
    y: &[f64],
    kind: TestStatistic,
    draws: u64,
    seed: u64,
) -> Result<TestResult> {
    if draws == 0 {
        return Err(Error::invalid("Monte Carlo test needs at least one draw"));
    }
    if w_obs.n() != design.n() {
        return Err(Error::invalid(format!(
            "observed assignment has length {}, design has n = {}",
            w_obs.n(),
            design.n()
        )));
    }
    let s_obs = statistic(kind, w_obs, y)?;
    let mut at_least = 0u64;
    for j in 1..=draws {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(j);
        let w = design.sample(&mut rng);
        if statistic(kind, &w, y)? >= s_obs {
            at_least += 1;
        }
    }
    Ok(TestResult {
        p_value: (1 + at_least) as f64 / (1 + draws) as f64,
        statistic: s_obs,
        kind,
        method: TestMethod::MonteCarlo,
        draws: Some(draws),
    })
}
