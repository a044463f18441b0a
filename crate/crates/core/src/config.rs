//! Declarative configuration for kernels, rerandomization schemes, and
//! simulation studies, loadable from TOML or JSON files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::TestStatistic;
use crate::kernels::{CovariateMatrix, KernelKind, KernelSpec, OmegaSpec};
use crate::numerics::SymMatrix;
use crate::rerand::{RerandSpec, RerandThreshold};

/// Parses TOML or JSON depending on the file extension (TOML unless the
/// extension is `.json`).
fn parse_by_extension<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        Ok(serde_json::from_str(text)?)
    } else {
        Ok(toml::from_str(text)?)
    }
}

/// Covariate weighting matrix, as written in config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaConfig {
    Identity,
    InverseCovariance,
    Explicit { matrix: Vec<Vec<f64>> },
}

impl OmegaConfig {
    pub fn resolve(&self) -> Result<OmegaSpec> {
        Ok(match self {
            OmegaConfig::Identity => OmegaSpec::Identity,
            OmegaConfig::InverseCovariance => OmegaSpec::InverseCovariance,
            OmegaConfig::Explicit { matrix } => {
                OmegaSpec::Explicit(SymMatrix::from_rows(matrix)?)
            }
        })
    }
}

/// Kernel description: family name plus family-specific parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// One of `linear`, `polynomial`, `gaussian`, `singleton`, `cr_reference`.
    pub kind: String,
    /// Polynomial degree; required for `polynomial`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    /// Single-column CSV holding the pinned mean vector; required for
    /// `singleton`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0_file: Option<String>,
    /// Optional diagonal regularization added to the Gram matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<OmegaConfig>,
}

impl KernelConfig {
    pub fn resolve(&self) -> Result<KernelSpec> {
        let kind = match self.kind.as_str() {
            "linear" => KernelKind::Linear,
            "polynomial" => {
                let degree = self.degree.ok_or_else(|| {
                    Error::invalid("polynomial kernel requires a `degree`")
                })?;
                KernelKind::Polynomial { degree }
            }
            "gaussian" => KernelKind::Gaussian,
            "singleton" => {
                let path = self.mu0_file.as_ref().ok_or_else(|| {
                    Error::invalid("singleton kernel requires `mu0_file`")
                })?;
                KernelKind::Singleton { mu0: read_column_csv(Path::new(path))? }
            }
            "cr_reference" => KernelKind::CrReference,
            other => {
                return Err(Error::invalid(format!(
                    "unknown kernel kind {other:?}; expected linear, polynomial, \
                     gaussian, singleton, or cr_reference"
                )))
            }
        };
        if self.degree.is_some() && !matches!(kind, KernelKind::Polynomial { .. }) {
            return Err(Error::invalid("`degree` only applies to the polynomial kernel"));
        }
        if self.mu0_file.is_some() && !matches!(kind, KernelKind::Singleton { .. }) {
            return Err(Error::invalid("`mu0_file` only applies to the singleton kernel"));
        }
        let mut spec = KernelSpec::new(kind);
        if let Some(omega) = &self.omega {
            spec = spec.with_omega(omega.resolve()?);
        }
        if let Some(ridge) = self.ridge {
            spec = spec.with_ridge(ridge);
        }
        Ok(spec)
    }
}

/// Reads a single-column CSV (with header) of floats.
fn read_column_csv(path: &Path) -> Result<Vec<f64>> {
    let x = CovariateMatrix::from_csv(path)?;
    if x.d() != 1 {
        return Err(Error::invalid(format!(
            "{} has {} columns, expected a single column",
            path.display(),
            x.d()
        )));
    }
    Ok((0..x.n()).map(|i| x.row(i)[0]).collect())
}

/// Rerandomization scheme, as written in config files. Exactly one of `a`
/// (raw threshold) and `p_a` (target acceptance rate) must be given.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RerandConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<OmegaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<u64>,
}

impl RerandConfig {
    pub fn resolve(&self) -> Result<RerandSpec> {
        let threshold = match (self.a, self.p_a) {
            (Some(a), None) => RerandThreshold::Explicit(a),
            (None, Some(p)) => RerandThreshold::TargetAcceptance(p),
            (None, None) => {
                return Err(Error::invalid(
                    "rerandomization needs a threshold: set `a` or `p_a`",
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::invalid("set only one of `a` and `p_a`"))
            }
        };
        let omega = match &self.omega {
            Some(cfg) => cfg.resolve()?,
            // Mahalanobis weighting is the standard choice.
            None => OmegaSpec::InverseCovariance,
        };
        Ok(RerandSpec { omega, threshold, max_draws: self.max_draws })
    }
}

/// Top-level config file for the design/evaluate/assign tools: optional
/// `[kernel]` and `[rerand]` sections, plus an optional explicit partition
/// `w` for tools that construct a fixed single-partition design.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerand: Option<RerandConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<i64>>,
}

impl ToolConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ToolConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        parse_by_extension(path, &text)
    }

    /// The `[kernel]` section, required.
    pub fn kernel_required(&self) -> Result<&KernelConfig> {
        self.kernel
            .as_ref()
            .ok_or_else(|| Error::invalid("config file is missing a [kernel] section"))
    }

    /// The `[rerand]` section, required.
    pub fn rerand_required(&self) -> Result<&RerandConfig> {
        self.rerand
            .as_ref()
            .ok_or_else(|| Error::invalid("config file is missing a [rerand] section"))
    }
}

/// Where simulation covariates come from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateSourceConfig {
    /// The dyadic worst-case construction; `n` must equal `2^b`.
    Example1 { b: u32 },
    /// Standard normal entries, `n` by `d`; seeded separately from the
    /// simulation seed so the draw is stable across config tweaks.
    Gaussian { d: usize, seed: u64 },
    Csv { path: String },
}

/// Conditional-expectation function `f` applied to covariate rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CefConfig {
    Zero,
    /// `f(x) = <beta, x>`.
    Linear { beta: Vec<f64> },
    /// Explicit per-unit values, length `n`.
    Values { values: Vec<f64> },
}

/// One design entry in a simulation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    /// Complete randomization.
    Cr,
    /// A fixed single partition.
    Single { w: Vec<i64> },
    /// Best single partition under the simulation kernel.
    Psod,
    /// Exact minimax design over all pairs.
    MsodExact,
    /// Inference-constrained minimax design.
    Icmsod { alpha: f64, t: usize },
    /// Exact rerandomization design.
    Rerand(RerandConfig),
}

impl DesignConfig {
    /// Default row label; duplicates get disambiguated by the runner.
    pub fn label(&self) -> &'static str {
        match self {
            DesignConfig::Cr => "cr",
            DesignConfig::Single { .. } => "single",
            DesignConfig::Psod => "psod",
            DesignConfig::MsodExact => "msod_exact",
            DesignConfig::Icmsod { .. } => "icmsod",
            DesignConfig::Rerand(_) => "rerand",
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_c() -> f64 {
    1.0
}
fn default_statistic() -> TestStatistic {
    TestStatistic::AbsMeanDiff
}

/// Full simulation study description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub replications: u64,
    pub covariates: CovariateSourceConfig,
    pub cef: CefConfig,
    pub designs: Vec<DesignConfig>,
    /// Treatment effect added as `±tau/2` per arm.
    #[serde(default)]
    pub tau: f64,
    /// Standard deviation of the per-arm idiosyncratic noise.
    #[serde(default)]
    pub noise_sd: f64,
    /// Share potential outcomes across arms (forces `tau = 0`).
    #[serde(default)]
    pub sharp_null: bool,
    #[serde(default = "default_statistic")]
    pub statistic: TestStatistic,
    /// Rejection level for the randomization tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Radius of the mean-outcome class used for risk reporting.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
    /// Kernel the optimized designs and the risk column are computed
    /// against; defaults to the reference class of complete randomization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
}

impl SimConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<SimConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        parse_by_extension(path, &text)
    }

    /// Canonical JSON echo of the config; feeds the report's content hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
