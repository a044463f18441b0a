//! Command-line front end: constructs designs, evaluates their worst-case
//! risk, draws assignments, runs randomization tests, and drives simulation
//! studies — all through ordinary files.
//!
//! Exit codes: 0 success; 2 invalid input (bad flags, malformed files,
//! dimension mismatches); 3 infeasible request (impossible probability cap,
//! empty acceptance region, exhausted draw budget); 4 numerical
//! non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdesign::config::{SimConfig, ToolConfig};
use mmdesign::designs::{sample_assignment, Assignment, Design};
use mmdesign::inference::{p_value_exact, p_value_mc, TestStatistic};
use mmdesign::kernels::{
    build_gram, build_gram_covariate_free, CovariateMatrix, GramMatrix, KernelKind, KernelSpec,
};
use mmdesign::optimizer::{best_assignment, check_cap_feasible, icmsod, msod_exact};
use mmdesign::rerand::exact_rerandomization_design;
use mmdesign::risk::minimax_risk;
use mmdesign::sim::{example1_covariates, run_simulation};
use mmdesign::{Error, Result};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "mmdesign",
    version,
    about = "Minimax-optimal randomized designs for two-arm experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a design and write it as JSON
    Design(DesignArgs),
    /// Worst-case risk of a design file over a kernel class
    Evaluate(EvaluateArgs),
    /// Draw one assignment from a design file
    Assign(AssignArgs),
    /// Randomization test of the sharp null
    Test(TestArgs),
    /// Run a simulation study from a config file
    Simulate(SimulateArgs),
    /// Dyadic worst-case covariate construction as CSV
    Example1(Example1Args),
    /// Kernel Gram matrix of a covariate file as CSV
    Gram(GramArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Complete randomization
    Cr,
    /// Fixed partition taken from the config's `w`
    Single,
    /// Best single partition under the kernel
    Psod,
    /// Exact minimax design over all balanced pairs
    MsodExact,
    /// Minimax design with per-assignment probability capped at alpha/2
    Icmsod,
    /// Uniform over assignments passing the configured imbalance threshold
    Rerand,
}

#[derive(Args)]
struct DesignArgs {
    /// Construction method
    #[arg(long, value_enum)]
    method: Method,
    /// Covariate CSV with a header row
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// TOML or JSON config with [kernel], [rerand], and `w` entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample size, for methods that need no covariate file
    #[arg(long)]
    n: Option<usize>,
    /// Test level: each signed assignment gets probability at most alpha/2
    #[arg(long)]
    alpha: Option<f64>,
    /// Candidate-pool size (the T best pairs) for the capped design
    #[arg(long)]
    t: Option<usize>,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Design JSON produced by `design`
    design: PathBuf,
    /// Covariate CSV the kernel is built from
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Config with the [kernel] section; reference class when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Radius of the mean-outcome class
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssignArgs {
    /// Design JSON produced by `design`
    design: PathBuf,
    /// RNG seed; a fixed seed gives a fixed assignment
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

// Variant names mirror the library's statistic enum and set the flag values.
#[allow(clippy::enum_variant_names)]
#[derive(Clone, Copy, ValueEnum)]
enum StatisticArg {
    /// |difference of arm means|
    AbsMeanDiff,
    /// |two-sample t|, pooled variance
    AbsTPooled,
    /// |two-sample t|, per-arm variances
    AbsTWelch,
}

impl From<StatisticArg> for TestStatistic {
    fn from(value: StatisticArg) -> Self {
        match value {
            StatisticArg::AbsMeanDiff => TestStatistic::AbsMeanDiff,
            StatisticArg::AbsTPooled => TestStatistic::AbsTPooled,
            StatisticArg::AbsTWelch => TestStatistic::AbsTWelch,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Design JSON the experiment was drawn from
    design: PathBuf,
    /// Observed assignment JSON produced by `assign`
    assignment: PathBuf,
    /// Observed outcomes: single-column CSV with a header
    outcomes: PathBuf,
    /// Test statistic
    #[arg(long, value_enum, default_value_t = StatisticArg::AbsMeanDiff)]
    statistic: StatisticArg,
    /// Monte Carlo draws; exhaustive enumeration when omitted
    #[arg(long)]
    draws: Option<u64>,
    /// RNG seed for the Monte Carlo test
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation description (TOML or JSON)
    #[arg(long)]
    config: PathBuf,
    /// Report CSV path; stdout when omitted. File output also writes a
    /// `.meta.json` sidecar with the config echo and content hash
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Example1Args {
    /// Scale parameter: n = 2^b units
    #[arg(long)]
    b: u32,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GramArgs {
    /// Covariate CSV with a header row
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Config with the [kernel] section; reference class when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample size, for kernels that need no covariate file
    #[arg(long)]
    n: Option<usize>,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Infeasible(_)
                | Error::DrawsExhausted { .. }
                | Error::EmptyAcceptance { .. } => 3,
                Error::NonConvergence(_) => 4,
                _ => 2,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    init_thread_pool()?;
    match command {
        Command::Design(args) => run_design(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Assign(args) => run_assign(args),
        Command::Test(args) => run_test(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Example1(args) => run_example1(args),
        Command::Gram(args) => run_gram(args),
    }
}

/// `DESIGN_THREADS` caps the worker count; all cores when unset.
fn init_thread_pool() -> Result<()> {
    let raw = match std::env::var("DESIGN_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(Error::Invalid(format!("DESIGN_THREADS: {e}"))),
    };
    let threads: usize = raw.trim().parse().map_err(|_| {
        Error::Invalid(format!("DESIGN_THREADS must be a positive integer, got {raw:?}"))
    })?;
    if threads == 0 {
        return Err(Error::Invalid("DESIGN_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Invalid(format!("could not size the thread pool: {e}")))
}

fn run_design(args: DesignArgs) -> Result<()> {
    let design = match args.method {
        Method::Cr => {
            let n = match (args.n, &args.covariates) {
                (Some(n), _) => n,
                (None, Some(path)) => CovariateMatrix::from_csv(path)?.n(),
                (None, None) => {
                    return Err(Error::Invalid(
                        "complete randomization needs --n or --covariates".into(),
                    ))
                }
            };
            Design::complete_randomization(n)?
        }
        Method::Single => {
            let config = load_config(args.config.as_deref())?;
            let w = config.w.as_ref().ok_or_else(|| {
                Error::Invalid(
                    "the single-partition method reads the partition from `w` in the \
                     config file"
                        .into(),
                )
            })?;
            Design::single_partition(&Assignment::from_i64(w)?)
        }
        Method::Psod => {
            let gram = resolve_gram(args.config.as_deref(), args.covariates.as_deref(), args.n)?;
            Design::single_partition(&best_assignment(&gram)?.assignment)
        }
        Method::MsodExact => {
            let gram = resolve_gram(args.config.as_deref(), args.covariates.as_deref(), args.n)?;
            msod_exact(&gram)?.design
        }
        Method::Icmsod => {
            let alpha = args
                .alpha
                .ok_or_else(|| Error::Invalid("the capped design needs --alpha".into()))?;
            let t = args
                .t
                .ok_or_else(|| Error::Invalid("the capped design needs --t".into()))?;
            // Validate the cap before reading any file: an impossible cap is
            // infeasible no matter what the kernel turns out to be.
            check_cap_feasible(alpha, t)?;
            let gram = resolve_gram(args.config.as_deref(), args.covariates.as_deref(), args.n)?;
            icmsod(&gram, alpha, t)?.design
        }
        Method::Rerand => {
            let config = load_config(args.config.as_deref())?;
            let spec = config.rerand_required()?.resolve()?;
            let path = args.covariates.as_deref().ok_or_else(|| {
                Error::Invalid("rerandomization needs a --covariates file".into())
            })?;
            let x = CovariateMatrix::from_csv(path)?;
            exact_rerandomization_design(&spec, &x)?
        }
    };
    write_output(args.out.as_deref(), &design.to_json_string())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let design = Design::load(&args.design)?;
    let gram = resolve_gram(
        args.config.as_deref(),
        args.covariates.as_deref(),
        Some(design.n()),
    )?;
    let report = minimax_risk(&design, &gram, args.c)?;
    write_output(args.out.as_deref(), &report.to_json_string())
}

fn run_assign(args: AssignArgs) -> Result<()> {
    let design = Design::load(&args.design)?;
    let w = sample_assignment(&design, args.seed);
    write_output(args.out.as_deref(), &assignment_json(&w))
}

fn run_test(args: TestArgs) -> Result<()> {
    let design = Design::load(&args.design)?;
    let w = read_assignment(&args.assignment)?;
    let y = read_outcomes(&args.outcomes)?;
    let kind = args.statistic.into();
    let result = match args.draws {
        Some(draws) => p_value_mc(&design, &w, &y, kind, draws, args.seed)?,
        None => p_value_exact(&design, &w, &y, kind)?,
    };
    write_output(args.out.as_deref(), &result.to_json_string())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let config = SimConfig::load(&args.config)?;
    let report = run_simulation(&config)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, report.to_csv_string())?;
            std::fs::write(path.with_extension("meta.json"), report.to_meta_json_string())?;
            Ok(())
        }
        None => {
            print!("{}", report.to_csv_string());
            Ok(())
        }
    }
}

fn run_example1(args: Example1Args) -> Result<()> {
    let xs = example1_covariates(args.b)?;
    let mut text = String::from("x1\n");
    for v in xs {
        text.push_str(&format!("{v}\n"));
    }
    write_output(args.out.as_deref(), &text)
}

fn run_gram(args: GramArgs) -> Result<()> {
    let gram = resolve_gram(args.config.as_deref(), args.covariates.as_deref(), args.n)?;
    let m = gram.matrix();
    let n = m.dim();
    let mut text = String::new();
    for j in 0..n {
        if j > 0 {
            text.push(',');
        }
        text.push_str(&format!("g{}", j + 1));
    }
    text.push('\n');
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                text.push(',');
            }
            text.push_str(&format!("{}", m.get(i, j)));
        }
        text.push('\n');
    }
    write_output(args.out.as_deref(), &text)
}

/// Kernel Gram matrix from the common inputs. The kernel comes from the
/// config's [kernel] section and defaults to the reference class of complete
/// randomization; covariate-free kernels take their size from `--n`, the
/// covariate file, or the pinned vector.
fn resolve_gram(
    config: Option<&Path>,
    covariates: Option<&Path>,
    n: Option<usize>,
) -> Result<GramMatrix> {
    let spec = match config {
        Some(path) => match &ToolConfig::load(path)?.kernel {
            Some(cfg) => cfg.resolve()?,
            None => KernelSpec::new(KernelKind::CrReference),
        },
        None => KernelSpec::new(KernelKind::CrReference),
    };
    let x = match covariates {
        Some(path) => Some(CovariateMatrix::from_csv(path)?),
        None => None,
    };
    if let (Some(n), Some(x)) = (n, &x) {
        if n != x.n() {
            return Err(Error::Invalid(format!(
                "--n is {n} but the covariate file has {} rows",
                x.n()
            )));
        }
    }
    match &spec.kind {
        KernelKind::Singleton { mu0 } => {
            let size = mu0.len();
            if let Some(n) = n {
                if n != size {
                    return Err(Error::Invalid(format!(
                        "the pinned mean vector has {size} entries but n is {n}"
                    )));
                }
            }
            build_gram_covariate_free(&spec, size)
        }
        KernelKind::CrReference => {
            let size = x.as_ref().map(|x| x.n()).or(n).ok_or_else(|| {
                Error::Invalid(
                    "the reference kernel needs --covariates or --n to fix the sample size"
                        .into(),
                )
            })?;
            build_gram_covariate_free(&spec, size)
        }
        _ => {
            let x = x.ok_or_else(|| {
                Error::Invalid("this kernel needs a --covariates file".into())
            })?;
            build_gram(&spec, &x)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ToolConfig> {
    match path {
        Some(path) => ToolConfig::load(path),
        None => Err(Error::Invalid("this method needs a --config file".into())),
    }
}

#[derive(Deserialize)]
struct AssignmentFile {
    schema: String,
    n: usize,
    w: Vec<i64>,
}

const ASSIGNMENT_SCHEMA: &str = "assignment/v1";

/// Assignments hold only small integers, so a hand-rolled writer keeps the
/// bytes stable across serializer versions.
fn assignment_json(w: &Assignment) -> String {
    let mut out = format!("{{\"schema\":\"{ASSIGNMENT_SCHEMA}\",\"n\":{},\"w\":[", w.n());
    for (i, &s) in w.signs().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(if s == 1 { "1" } else { "-1" });
    }
    out.push_str("]}\n");
    out
}

fn read_assignment(path: &Path) -> Result<Assignment> {
    let text = std::fs::read_to_string(path)?;
    let file: AssignmentFile = serde_json::from_str(&text)?;
    if file.schema != ASSIGNMENT_SCHEMA {
        return Err(Error::Invalid(format!(
            "unsupported assignment schema {:?}, expected {ASSIGNMENT_SCHEMA:?}",
            file.schema
        )));
    }
    let w = Assignment::from_i64(&file.w)?;
    if w.n() != file.n {
        return Err(Error::Invalid(format!(
            "assignment file says n = {} but lists {} entries",
            file.n,
            w.n()
        )));
    }
    Ok(w)
}

fn read_outcomes(path: &Path) -> Result<Vec<f64>> {
    let x = CovariateMatrix::from_csv(path)?;
    if x.d() != 1 {
        return Err(Error::Invalid(format!(
            "{} has {} columns; outcomes must be a single column",
            path.display(),
            x.d()
        )));
    }
    Ok((0..x.n()).map(|i| x.row(i)[0]).collect())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
