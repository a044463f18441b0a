//! Simulation studies: build a panel of designs against one covariate draw,
//! run replicated experiments under a configurable outcome model, and report
//! worst-case risk, predicted and empirical mean squared error, and
//! randomization-test rejection rates side by side.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{
    CefConfig, CovariateSourceConfig, DesignConfig, KernelConfig, SimConfig,
};
use crate::designs::{Assignment, Design};
use crate::error::{Error, Result};
use crate::inference::{p_value_exact, statistic, TestStatistic};
use crate::jsonfmt::{f64_repr, json_string};
use crate::kernels::{
    build_gram, build_gram_covariate_free, CovariateMatrix, GramMatrix, KernelKind,
    KernelSpec,
};
use crate::optimizer::{best_assignment, icmsod, msod_exact};
use crate::rerand::exact_rerandomization_design;
use crate::risk::{minimax_risk, predict_mse};

/// Dyadic single-covariate construction on `n = 2^b` units for which a
/// perfectly balanced split exists but every nearly-balanced split is bad:
/// the best single partition is unique while complete randomization spreads
/// risk over all pairs.
pub fn example1_covariates(b: u32) -> Result<Vec<f64>> {
    if !(2..=10).contains(&b) {
        return Err(Error::invalid(format!(
            "the dyadic construction supports 2 <= b <= 10, got {b}"
        )));
    }
    let n = 1usize << b;
    let mut xs = Vec::with_capacity(n);
    for i in 1..=n as u64 {
        // Terms t = 0, 1, … while t <= b - max(2, log2(i)).
        let upper = b as f64 - (2.0f64).max((i as f64).log2());
        let mut acc = 0.0;
        let mut t: i64 = 0;
        while (t as f64) <= upper {
            let half = 1u64 << (b as i64 - t - 1);
            let sign = if (i + half - 1) / half % 2 == 1 { -1.0 } else { 1.0 };
            let exp = -(1i64 << (b - 1)) + half as i64 + ((i - 1) % half) as i64;
            acc += sign * (exp as f64).exp2();
            t += 1;
        }
        xs.push(acc);
    }
    Ok(xs)
}

/// One design's row in the simulation report.
#[derive(Debug, Clone)]
pub struct SimRow {
    pub label: String,
    /// Worst-case risk of the design over the configured kernel class.
    pub minimax_risk: f64,
    /// Model-implied mean squared error of the estimator.
    pub predicted_mse: f64,
    /// Monte Carlo mean squared error around the population effect.
    pub empirical_mse: f64,
    /// Share of replications with randomization-test p-value below alpha.
    pub rejection_rate: f64,
}

/// Full simulation output: one row per design plus provenance.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
    /// Canonical JSON echo of the configuration that produced the report.
    pub config_json: String,
    /// SHA-256 over the canonical config and the covariate bytes; two
    /// reports with equal hashes came from identical inputs.
    pub content_hash: String,
}

impl SimReport {
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("design,minimax_risk,predicted_mse,empirical_mse,rejection_rate\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.label,
                f64_repr(row.minimax_risk),
                f64_repr(row.predicted_mse),
                f64_repr(row.empirical_mse),
                f64_repr(row.rejection_rate),
            ));
        }
        out
    }

    /// Sidecar JSON with the config echo and content hash.
    pub fn to_meta_json_string(&self) -> String {
        format!(
            "{{\"schema\":\"simreport/v1\",\"content_hash\":{},\"config\":{}}}\n",
            json_string(&self.content_hash),
            self.config_json,
        )
    }
}

/// Builds the covariates the config asks for.
pub fn build_covariates(config: &SimConfig) -> Result<CovariateMatrix> {
    let x = match &config.covariates {
        CovariateSourceConfig::Example1 { b } => {
            CovariateMatrix::from_column(example1_covariates(*b)?)?
        }
        CovariateSourceConfig::Gaussian { d, seed } => {
            if *d == 0 {
                return Err(Error::invalid("gaussian covariates need d >= 1"));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let data: Vec<Vec<f64>> = (0..config.n)
                .map(|_| (0..*d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let names = (1..=*d).map(|j| format!("x{j}")).collect();
            CovariateMatrix::new(data, names)?
        }
        CovariateSourceConfig::Csv { path } => CovariateMatrix::from_csv(path)?,
    };
    if x.n() != config.n {
        return Err(Error::invalid(format!(
            "covariate source yields {} rows but the config says n = {}",
            x.n(),
            config.n
        )));
    }
    Ok(x)
}

fn cef_values(config: &SimConfig, x: &CovariateMatrix) -> Result<Vec<f64>> {
    match &config.cef {
        CefConfig::Zero => Ok(vec![0.0; config.n]),
        CefConfig::Linear { beta } => {
            if beta.len() != x.d() {
                return Err(Error::invalid(format!(
                    "cef beta has length {}, covariates have {} columns",
                    beta.len(),
                    x.d()
                )));
            }
            Ok((0..x.n())
                .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
                .collect())
        }
        CefConfig::Values { values } => {
            if values.len() != config.n {
                return Err(Error::invalid(format!(
                    "cef values have length {}, expected {}",
                    values.len(),
                    config.n
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("cef values must be finite"));
            }
            Ok(values.clone())
        }
    }
}

fn build_kernel_gram(
    kernel: &Option<KernelConfig>,
    x: &CovariateMatrix,
) -> Result<GramMatrix> {
    let spec = match kernel {
        Some(cfg) => cfg.resolve()?,
        None => KernelSpec::new(KernelKind::CrReference),
    };
    match spec.kind {
        KernelKind::Singleton { .. } | KernelKind::CrReference => {
            build_gram_covariate_free(&spec, x.n())
        }
        _ => build_gram(&spec, x),
    }
}

fn build_design(
    entry: &DesignConfig,
    gram: &GramMatrix,
    x: &CovariateMatrix,
    n: usize,
) -> Result<Design> {
    match entry {
        DesignConfig::Cr => Design::complete_randomization(n),
        DesignConfig::Single { w } => Ok(Design::single_partition(&Assignment::from_i64(w)?)),
        DesignConfig::Psod => {
            Ok(Design::single_partition(&best_assignment(gram)?.assignment))
        }
        DesignConfig::MsodExact => Ok(msod_exact(gram)?.design),
        DesignConfig::Icmsod { alpha, t } => Ok(icmsod(gram, *alpha, *t)?.design),
        DesignConfig::Rerand(cfg) => exact_rerandomization_design(&cfg.resolve()?, x),
    }
}

/// Disambiguates duplicate design labels by suffixing `-2`, `-3`, ….
fn label_designs(entries: &[DesignConfig]) -> Vec<String> {
    let mut labels = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let base = entry.label().to_string();
        let dup = entries[..i].iter().filter(|e| e.label() == base).count();
        if dup == 0 {
            labels.push(base);
        } else {
            labels.push(format!("{base}-{}", dup + 1));
        }
    }
    labels
}

struct RepOutcome {
    sq_err: f64,
    reject: bool,
}

/// Runs the study. Replications are mutually independent (each gets its own
/// RNG streams for noise and for every design's assignment draw) and are
/// evaluated in parallel; aggregation is a sequential fold in replication
/// order, so results are identical for any worker count.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    validate(config)?;
    let x = build_covariates(config)?;
    let f = cef_values(config, &x)?;
    let gram = build_kernel_gram(&config.kernel, &x)?;
    let labels = label_designs(&config.designs);
    let designs = config
        .designs
        .iter()
        .map(|entry| build_design(entry, &gram, &x, config.n))
        .collect::<Result<Vec<Design>>>()?;
    for (design, label) in designs.iter().zip(&labels) {
        if design.is_implicit_cr() {
            return Err(Error::invalid(format!(
                "design {label:?}: n is too large for exact tests in simulation"
            )));
        }
    }

    let n = config.n;
    let tau = if config.sharp_null { 0.0 } else { config.tau };
    let sd = config.noise_sd;
    let reps = config.replications;
    let d_count = designs.len() as u64;

    // Stream layout per replication r: design k draws from stream k*R + r,
    // outcome noise from stream D*R + r.
    let per_rep = |r: u64| -> Result<Vec<RepOutcome>> {
        let mut noise_rng = ChaCha12Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(d_count * reps + r);
        let mut y_plus = vec![0.0; n];
        let mut y_minus = vec![0.0; n];
        for i in 0..n {
            if config.sharp_null {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                y_plus[i] = f[i] + sd * e;
                y_minus[i] = y_plus[i];
            } else {
                let e_plus: f64 = StandardNormal.sample(&mut noise_rng);
                let e_minus: f64 = StandardNormal.sample(&mut noise_rng);
                y_plus[i] = f[i] + tau / 2.0 + sd * e_plus;
                y_minus[i] = f[i] - tau / 2.0 + sd * e_minus;
            }
        }
        let mut out = Vec::with_capacity(designs.len());
        for (k, design) in designs.iter().enumerate() {
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64 * reps + r);
            let w = design.sample(&mut rng);
            let y_obs: Vec<f64> = (0..n)
                .map(|i| if w.sign(i) == 1 { y_plus[i] } else { y_minus[i] })
                .collect();
            let est = 2.0 / n as f64 * w.dot(&y_obs);
            let test = p_value_exact(design, &w, &y_obs, config.statistic)?;
            out.push(RepOutcome {
                sq_err: (est - tau) * (est - tau),
                reject: test.p_value <= config.alpha,
            });
        }
        Ok(out)
    };

    let per_rep_results: Result<Vec<Vec<RepOutcome>>> =
        (0..reps).into_par_iter().map(per_rep).collect();
    let per_rep_results = per_rep_results?;

    let mu: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
    let (noise_var_sum, sate_var) = if config.sharp_null {
        // Shared noise: epsilon_i = 2 eta_i, and the sample effect is 0.
        (4.0 * n as f64 * sd * sd, 0.0)
    } else {
        (2.0 * n as f64 * sd * sd, 2.0 * sd * sd / n as f64)
    };

    let mut rows = Vec::with_capacity(designs.len());
    for (k, (design, label)) in designs.iter().zip(labels).enumerate() {
        let mut sq_sum = 0.0;
        let mut rejects = 0u64;
        for rep in &per_rep_results {
            sq_sum += rep[k].sq_err;
            rejects += rep[k].reject as u64;
        }
        let risk = minimax_risk(design, &gram, config.c)?.minimax_risk;
        let predicted = predict_mse(design, &mu, noise_var_sum, sate_var)?.total;
        rows.push(SimRow {
            label,
            minimax_risk: risk,
            predicted_mse: predicted,
            empirical_mse: sq_sum / reps as f64,
            rejection_rate: rejects as f64 / reps as f64,
        });
    }

    let config_json = config.canonical_json();
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    hasher.update(x.data_bytes());
    let content_hash = format!("{:x}", hasher.finalize());

    Ok(SimReport { rows, config_json, content_hash })
}

fn validate(config: &SimConfig) -> Result<()> {
    if config.n < 2 || config.n % 2 != 0 {
        return Err(Error::invalid(format!(
            "simulation needs an even n of at least 2, got {}",
            config.n
        )));
    }
    if config.replications == 0 {
        return Err(Error::invalid("simulation needs at least one replication"));
    }
    if config.designs.is_empty() {
        return Err(Error::invalid("simulation needs at least one design"));
    }
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1], got {}",
            config.alpha
        )));
    }
    if !(config.c > 0.0) {
        return Err(Error::invalid(format!("c must be positive, got {}", config.c)));
    }
    if !(config.noise_sd >= 0.0) {
        return Err(Error::invalid(format!(
            "noise_sd must be nonnegative, got {}",
            config.noise_sd
        )));
    }
    if !config.tau.is_finite() {
        return Err(Error::invalid("tau must be finite"));
    }
    if matches!(config.statistic, TestStatistic::AbsTPooled | TestStatistic::AbsTWelch)
        && config.n < 4
    {
        return Err(Error::invalid("t statistics need n >= 4"));
    }
    let _ = statistic; // statistics module is exercised via p_value_exact
    Ok(())
}
