//! The `influence-lab` command-line front end.
//!
//! Every subcommand writes a JSON envelope holding the resolved
//! configuration, the seed, the tool version and the wall clock next to the
//! result. Exit codes come from [`Error::exit_code`].

mod config;
mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::distributions::load_csv;
use crate::error::{Error, Result};
use crate::estimands::EstimandSpec;
use crate::estimation::{fit_and_estimate, LearnerConfig, Method};
use crate::gateaux::{eif_sweep, t1_sweep, GateauxReport, Identity};
use crate::seed::derive_seed;
use crate::simulation::{
    double_robustness_experiment, median_efficiency_experiment, run_replications_multi, Arm, Dgp,
    RunPlan, N_ORACLE,
};

pub use config::{parse_config, parse_spec_arg, DataSource, RunConfig, DEFAULT_ALPHA, DEFAULT_FOLDS};
pub use report::{histogram_svg, metrics_table, standardized_errors};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "INFLUENCE_LAB_THREADS";

pub const TOOL: &str = "influence-lab";

/// What every subcommand writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<C, R> {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: C,
    pub started_at_unix: f64,
    pub elapsed_secs: f64,
    pub result: R,
}

#[derive(Parser, Debug)]
#[command(name = "influence-lab", version, about = "Debiased estimation with efficient influence functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate one functional on a data set.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment on a synthetic DGP.
    Simulate(SimulateArgs),
    /// Check analytic influence functions against numerical Gateaux derivatives.
    VerifyEif(VerifyArgs),
    /// Render a simulation JSON file as a table and optional SVG histogram.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// CSV file, overriding `path` in [data].
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Leave the per-observation influence values out of the output.
    #[arg(long)]
    omit_eif: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Experiment {
    Replications,
    DoubleRobustness,
    MedianEfficiency,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "normal-mean")]
    dgp: String,
    /// Estimand, e.g. `ate` or `quantile(tau=0.5)`. Defaults to the DGP's
    /// natural target.
    #[arg(long)]
    estimand: Option<String>,
    /// Comma-separated methods.
    #[arg(long, default_value = "one-step")]
    method: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Comma-separated misspecification arms, or `all`. Implies the
    /// double-robustness experiment.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long, value_enum, default_value = "replications")]
    experiment: Experiment,
    /// File with a [learners] section; the DGP's correctly specified
    /// learners are used otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = N_ORACLE)]
    oracle_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// `all` or one estimand, e.g. `quantile(tau=0.3)`.
    #[arg(long, default_value = "all")]
    spec: String,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    max_support: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Check the `t = 1` identity instead of `t = 0`.
    #[arg(long)]
    at_one: bool,
    /// Emit every contaminant's report, not only the worst per trial and
    /// estimand.
    #[arg(long)]
    all_contaminants: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Write a histogram of standardized errors here.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Which report of the file the histogram shows.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A pool built earlier in the process wins; that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => estimate_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::VerifyEif(a) => verify_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn write_envelope<C: Serialize, R: Serialize>(
    out: Option<&Path>,
    seed: u64,
    config: C,
    started: (f64, Instant),
    result: R,
) -> Result<()> {
    let env = Envelope {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        started_at_unix: started.0,
        elapsed_secs: started.1.elapsed().as_secs_f64(),
        result,
    };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            Method::parse(s).ok_or_else(|| {
                Error::Argument(format!("unknown method `{s}`; expected plugin, one-step, ee or tmle"))
            })
        })
        .collect()
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let text = std::fs::read_to_string(&a.config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(path) = a.data {
        cfg.data = match cfg.data {
            DataSource::Csv { roles, .. } => DataSource::Csv { path, roles },
            DataSource::Dgp { .. } => {
                return Err(Error::Argument(
                    "--data needs a config whose [data] section declares column roles".into(),
                ))
            }
        };
    }
    if let Some(m) = a.method {
        cfg.method = Method::parse(&m).ok_or_else(|| Error::Argument(format!("unknown method `{m}`")))?;
    }
    cfg.folds = a.folds.unwrap_or(cfg.folds);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Argument(format!("--alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let out = a.out.or_else(|| cfg.output.clone());
    let data = match &cfg.data {
        DataSource::Csv { path, roles } => {
            // Relative paths in a config file are relative to that file.
            let path = if path.is_relative() && !path.exists() {
                a.config.parent().map_or(path.clone(), |d| d.join(path))
            } else {
                path.clone()
            };
            load_csv(path, roles)?
        }
        DataSource::Dgp { name, n } => Dgp::from_name(name)?.generate(*n, cfg.seed)?,
    };
    let mut report = fit_and_estimate(
        cfg.method,
        &cfg.spec,
        &data,
        &cfg.learners,
        cfg.folds,
        derive_seed(cfg.seed, 0),
        cfg.alpha,
    )?;
    if a.omit_eif {
        report.eif_values.clear();
    }
    write_envelope(out.as_deref(), cfg.seed, &cfg, started, report)
}

/// The natural estimand of each DGP.
pub fn default_spec(dgp: &Dgp) -> EstimandSpec {
    match dgp {
        Dgp::NormalMean { .. } => EstimandSpec::PopulationMean,
        Dgp::AteLinear { .. } | Dgp::AteNonlinear { .. } => EstimandSpec::Ate,
        Dgp::PartiallyLinear { .. } => EstimandSpec::PartiallyLinearCoefficient,
        Dgp::MediationBinaryM { .. } => EstimandSpec::InterventionalDirectEffect { x1: 1, x0: 0 },
        Dgp::DensityMixture { .. } => EstimandSpec::AverageDensity,
    }
}

/// Resolved `simulate` settings, echoed into the output.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateConfig {
    experiment: Experiment,
    dgp: Dgp,
    spec: EstimandSpec,
    methods: Vec<Method>,
    arms: Vec<Arm>,
    plan: RunPlan,
    learners: Option<LearnerConfig>,
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let mut experiment = a.experiment;
    let arms = match a.arms.as_deref() {
        None => vec![],
        Some("all") => Arm::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .map(|s| Arm::parse(s).ok_or_else(|| Error::Argument(format!("unknown arm `{s}`"))))
            .collect::<Result<_>>()?,
    };
    if !arms.is_empty() {
        if experiment == Experiment::MedianEfficiency {
            return Err(Error::Argument("--arms belongs to the double-robustness experiment".into()));
        }
        experiment = Experiment::DoubleRobustness;
    }
    let arms = if experiment == Experiment::DoubleRobustness && arms.is_empty() {
        Arm::ALL.to_vec()
    } else {
        arms
    };
    let dgp = match experiment {
        Experiment::MedianEfficiency => Dgp::from_name("normal-mean")?,
        Experiment::DoubleRobustness if a.dgp == "normal-mean" => Dgp::from_name("ate-nonlinear")?,
        _ => Dgp::from_name(&a.dgp)?,
    };
    let spec = match (&a.estimand, experiment) {
        (Some(s), Experiment::Replications) => parse_spec_arg(s)?,
        (Some(_), _) => {
            return Err(Error::Argument("--estimand is fixed by the chosen experiment".into()))
        }
        (None, Experiment::MedianEfficiency) => EstimandSpec::Quantile { tau: 0.5 },
        (None, _) => default_spec(&dgp),
    };
    let methods = parse_methods(&a.method)?;
    let plan = RunPlan {
        folds: a.folds,
        alpha: a.alpha,
        oracle_size: a.oracle_size,
        ..RunPlan::new(a.n, a.reps, a.seed)
    };
    if !(plan.alpha > 0.0 && plan.alpha < 1.0) {
        return Err(Error::Argument(format!("--alpha must lie in (0, 1), got {}", plan.alpha)));
    }
    let learners = match (&a.config, experiment) {
        (Some(path), Experiment::Replications) => {
            Some(parse_learners_file(&std::fs::read_to_string(path)?, &spec)?)
        }
        (Some(_), _) => {
            return Err(Error::Argument("--config applies to the replications experiment only".into()))
        }
        (None, Experiment::Replications) => Some(dgp.correct_config(&spec)?),
        (None, _) => None,
    };
    let cfg = SimulateConfig {
        experiment,
        dgp: dgp.clone(),
        spec: spec.clone(),
        methods: methods.clone(),
        arms: arms.clone(),
        plan: plan.clone(),
        learners: learners.clone(),
    };
    let out = a.out.as_deref();
    match experiment {
        Experiment::Replications => {
            let learners = learners.expect("set for replications");
            let reports = run_replications_multi(&dgp, &spec, &methods, &learners, &plan, None)?;
            write_envelope(out, a.seed, cfg, started, reports)
        }
        Experiment::DoubleRobustness => {
            let reports = double_robustness_experiment(&dgp, &arms, &methods, &plan)?;
            write_envelope(out, a.seed, cfg, started, reports)
        }
        Experiment::MedianEfficiency => {
            let report = median_efficiency_experiment(&plan)?;
            write_envelope(out, a.seed, cfg, started, report)
        }
    }
}

/// Reads a [learners] section (and optionally [run]) for `simulate --config`.
/// Only the learners and `trim` are used.
fn parse_learners_file(text: &str, spec: &EstimandSpec) -> Result<LearnerConfig> {
    let name = spec_config_lines(spec);
    let full = format!("[data]\ndgp = normal-mean\nn = 1\n[estimand]\n{name}\n{text}");
    // Line numbers in errors must point into the user's file.
    let offset = full.lines().count() - text.lines().count();
    match parse_config(&full) {
        Ok(cfg) => Ok(cfg.learners),
        Err(Error::Config { line, message }) => Err(Error::Config {
            line: line.saturating_sub(offset),
            message,
        }),
        Err(e) => Err(e),
    }
}

/// `[estimand]` lines reproducing `spec`.
fn spec_config_lines(spec: &EstimandSpec) -> String {
    let mut lines = vec![format!("name = {}", spec.name())];
    let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
    match spec {
        EstimandSpec::PotentialOutcomeMean { level } => kv("level", level.to_string()),
        EstimandSpec::AverageDerivativeEffect { weight } => kv(
            "weight",
            match weight {
                crate::estimands::Weight::Unit => "unit".into(),
                crate::estimands::Weight::Polynomial(c) => {
                    c.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
                }
            },
        ),
        EstimandSpec::Quantile { tau } => kv("tau", tau.to_string()),
        EstimandSpec::TailConditionalExpectation { threshold } => kv("threshold", threshold.to_string()),
        EstimandSpec::ConditionalCdf { y, x } => {
            kv("y", y.to_string());
            kv("x", x.to_string());
        }
        EstimandSpec::InterventionalDirectEffect { x1, x0 } => {
            kv("x1", x1.to_string());
            kv("x0", x0.to_string());
        }
        EstimandSpec::IncrementalPropensity { odds_multiplier } => {
            kv("odds_multiplier", odds_multiplier.to_string())
        }
        EstimandSpec::DensityAtPoint { y } => kv("y", y.to_string()),
        EstimandSpec::ConditionalMeanAt { x } => kv("x", x.to_string()),
        _ => {}
    }
    lines.join("\n")
}

/// Summary of a `verify-eif` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifySummary {
    pub identity: Identity,
    pub specs: Vec<EstimandSpec>,
    pub trials: usize,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
    pub flagged: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub reports: Vec<GateauxReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VerifyConfig {
    spec: String,
    trials: usize,
    max_support: usize,
    tolerance: f64,
    at_one: bool,
    all_contaminants: bool,
}

/// Keeps the report with the largest relative error for each
/// (trial, estimand) pair, in first-seen order.
pub fn worst_per_trial(reports: Vec<GateauxReport>) -> Vec<GateauxReport> {
    let mut out: Vec<GateauxReport> = Vec::new();
    let mut index: std::collections::HashMap<(String, String), usize> = Default::default();
    let score = |r: &GateauxReport| if r.skipped { f64::NEG_INFINITY } else { r.rel_error };
    for r in reports {
        let trial = r.contaminant.split(':').next().unwrap_or("").to_string();
        let key = (trial, r.spec.to_string());
        match index.get(&key) {
            Some(&i) => {
                if score(&r) > score(&out[i]) {
                    out[i] = r;
                }
            }
            None => {
                index.insert(key, out.len());
                out.push(r);
            }
        }
    }
    out
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    if a.trials == 0 || a.max_support == 0 {
        return Err(Error::Argument("--trials and --max-support must be positive".into()));
    }
    if !(a.tolerance > 0.0) {
        return Err(Error::Argument("--tolerance must be positive".into()));
    }
    let specs = if a.spec == "all" {
        EstimandSpec::discrete_catalog()
    } else {
        let spec = parse_spec_arg(&a.spec)?;
        if !spec.has_discrete_oracle() {
            return Err(Error::Argument(format!("{spec} has no finite-support oracle")));
        }
        vec![spec]
    };
    let reports = if a.at_one {
        t1_sweep(&specs, a.trials, a.max_support, a.seed)?
    } else {
        eif_sweep(&specs, a.trials, a.max_support, a.seed)?
    };
    let checked = reports.len();
    let failed: Vec<&GateauxReport> = reports.iter().filter(|r| !r.passes(a.tolerance)).collect();
    let failures = failed.len();
    let first_failure = failed
        .first()
        .map(|r| format!("{} at {}: rel error {:e}", r.spec, r.contaminant, r.rel_error));
    let summary = VerifySummary {
        identity: if a.at_one { Identity::AtOne } else { Identity::AtZero },
        specs,
        trials: a.trials,
        tolerance: a.tolerance,
        checked,
        skipped: reports.iter().filter(|r| r.skipped).count(),
        flagged: reports.iter().filter(|r| r.flagged && !r.skipped).count(),
        failures,
        max_rel_error: reports
            .iter()
            .filter(|r| !r.skipped)
            .map(|r| r.rel_error)
            .fold(0.0, f64::max),
        reports: if a.all_contaminants {
            reports
        } else {
            worst_per_trial(reports)
        },
    };
    let cfg = VerifyConfig {
        spec: a.spec,
        trials: a.trials,
        max_support: a.max_support,
        tolerance: a.tolerance,
        at_one: a.at_one,
        all_contaminants: a.all_contaminants,
    };
    write_envelope(a.out.as_deref(), a.seed, cfg, started, summary)?;
    match first_failure {
        None => Ok(()),
        Some(first) => Err(Error::Verification(format!(
            "{failures} of {checked} checks exceed tolerance {:e}; first: {first}",
            a.tolerance
        ))),
    }
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let result = value.get("result").cloned().unwrap_or(value);
    let reports = report::metrics_from_json(result)?;
    print!("{}", metrics_table(&reports));
    if let Some(path) = a.svg {
        let m = reports.get(a.index).ok_or_else(|| {
            Error::Argument(format!("--index {} but the file holds {} reports", a.index, reports.len()))
        })?;
        std::fs::write(path, histogram_svg(m)?)?;
    }
    Ok(())
}
