use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use idrcde::bench::{run_benchmark, simulate, true_rule, BenchConfig, ScenarioSpec};
use idrcde::eval::{cross_validate, default_grid, evaluate, fold_table_csv};
use idrcde::fit::{fit, FitSpec, FittedIDR};
use idrcde::io::{read_dataset_file, write_dataset_file};
use idrcde::{Dataset, UtilitySpec};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "idrcde",
    version,
    about = "Risk-aware individualized decision rules"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a rule with fixed penalties.
    Fit(FitArgs),
    /// Cross-validate the penalties and refit.
    Cv(CvArgs),
    /// Evaluate a fitted rule on a dataset.
    Eval(EvalArgs),
    /// Run the replication benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    scenario: u8,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON fit settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda_alloc: Option<f64>,
    #[arg(long)]
    lambda_rule: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CvConfig {
    fit: FitSpec,
    grid: Vec<(f64, f64)>,
    folds: usize,
    seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            fit: FitSpec::default(),
            grid: default_grid(),
            folds: 10,
            seed: 0,
        }
    }
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Winner JSON (selected penalties and the refitted rule).
    #[arg(long)]
    out: PathBuf,
    /// Fold table CSV.
    #[arg(long)]
    table: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    utility: UtilitySpec,
    probs: Vec<f64>,
    /// Report disagreement with the benchmark rule `sign(0.5 + x1 - x2 + x3)`.
    benchmark_truth: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            utility: UtilitySpec::PiecewiseLinear { xi1: 0.0, xi2: 2.0 },
            probs: vec![0.5, 0.25],
            benchmark_truth: false,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fitted rule JSON from `fit` or `cv`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark_truth: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Record wall-clock times in the report.
    #[arg(long)]
    timing: bool,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct CvOutput<'a> {
    lambda_alloc: f64,
    lambda_rule: f64,
    grid: &'a [(f64, f64)],
    scores: &'a [f64],
    fitted: &'a FittedIDR,
}

/// Failure classes mapped to exit codes.
#[derive(Debug, Clone, Copy)]
enum Class {
    Config = 2,
    Data = 3,
    Solver = 4,
}

#[derive(Debug)]
struct Failure {
    class: Class,
    error: anyhow::Error,
}

trait Classify<T> {
    fn class(self, class: Class) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn class(self, class: Class) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            class,
            error: e.into(),
        })
    }
}

/// Classifies library errors raised while fitting or evaluating.
fn solver_stage<T>(r: idrcde::Result<T>) -> Result<T, Failure> {
    use idrcde::Error as E;
    r.map_err(|e| {
        let class = match &e {
            E::InvalidParameter(_) => Class::Config,
            E::Dimension { .. }
            | E::InvalidData(_)
            | E::EmptySample
            | E::Parse { .. }
            | E::Schema(_) => Class::Data,
            E::Io(_) | E::Json(_) => Class::Data,
            E::Qp(_) | E::InfeasibleStart { .. } => Class::Solver,
        };
        Failure {
            class,
            error: e.into(),
        }
    })
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .class(Class::Config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .class(Class::Config)
        }
    }
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    read_dataset_file(path)
        .with_context(|| format!("reading dataset {}", path.display()))
        .class(Class::Data)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .class(Class::Data)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).class(Class::Data)?;
    s.push('\n');
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure {
                class: Class::Config,
                error: anyhow!("--jobs must be positive"),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .class(Class::Config)?;
    }
    match cli.command {
        Command::Simulate(a) => {
            let spec = ScenarioSpec {
                id: a.scenario,
                n: a.n,
                p: a.p,
                seed: a.seed,
            };
            let data = simulate(&spec).class(Class::Config)?;
            write_dataset_file(&data, &a.out)
                .with_context(|| format!("writing {}", a.out.display()))
                .class(Class::Data)?;
            info!("wrote {} rows to {}", data.n(), a.out.display());
        }
        Command::Fit(a) => {
            let mut spec: FitSpec = read_json(a.config.as_deref())?;
            if let Some(l) = a.lambda_alloc {
                spec.lambda_alloc = l;
            }
            if let Some(l) = a.lambda_rule {
                spec.lambda_rule = l;
            }
            let data = load_data(&a.data)?;
            let fitted = solver_stage(fit(&data, &spec))?;
            write(&a.out, &to_json(&fitted)?)?;
        }
        Command::Cv(a) => {
            let mut cfg: CvConfig = read_json(a.config.as_deref())?;
            if let Some(k) = a.folds {
                cfg.folds = k;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let data = load_data(&a.data)?;
            let cv = solver_stage(cross_validate(
                &data, &cfg.fit, &cfg.grid, cfg.folds, cfg.seed,
            ))?;
            write(&a.table, &solver_stage(fold_table_csv(&cv.table))?)?;
            let out = CvOutput {
                lambda_alloc: cv.lambda_alloc,
                lambda_rule: cv.lambda_rule,
                grid: &cfg.grid,
                scores: &cv.scores,
                fitted: &cv.fitted,
            };
            write(&a.out, &to_json(&out)?)?;
        }
        Command::Eval(a) => {
            let mut cfg: EvalConfig = read_json(a.config.as_deref())?;
            cfg.benchmark_truth |= a.benchmark_truth;
            let text = fs::read_to_string(&a.model)
                .with_context(|| format!("reading {}", a.model.display()))
                .class(Class::Data)?;
            let fitted = model_from_json(&text).class(Class::Data)?;
            let data = load_data(&a.data)?;
            if fitted.rule.beta.len() != data.p() {
                return Err(Failure {
                    class: Class::Data,
                    error: anyhow!(
                        "model has {} covariates, dataset has {}",
                        fitted.rule.beta.len(),
                        data.p()
                    ),
                });
            }
            let truth = if cfg.benchmark_truth {
                Some(true_rule(data.p()).class(Class::Data)?)
            } else {
                None
            };
            let report = solver_stage(evaluate(
                &fitted.rule,
                &fitted.alloc,
                &cfg.utility,
                &data,
                truth
                    .as_ref()
                    .map(|t| t as &dyn idrcde::model::DecisionRule),
                &cfg.probs,
            ))?;
            write(&a.out, &to_json(&report)?)?;
        }
        Command::Bench(a) => {
            let mut cfg: BenchConfig = read_json(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(r) = a.reps {
                cfg.reps = r;
            }
            cfg.timing |= a.timing;
            let report = solver_stage(run_benchmark(&cfg))?;
            let base = a.out.to_string_lossy().to_string();
            write(
                Path::new(&format!("{base}.csv")),
                &solver_stage(report.to_csv())?,
            )?;
            write(Path::new(&format!("{base}.json")), &to_json(&report)?)?;
            if !report.failures.is_empty() {
                log::warn!(
                    "{} replication(s) failed; see the JSON report",
                    report.failures.len()
                );
            }
        }
    }
    Ok(())
}

/// Accepts either a `fit` output or the `fitted` member of a `cv` output.
fn model_from_json(text: &str) -> anyhow::Result<FittedIDR> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let inner = value.get("fitted").cloned().unwrap_or(value);
    Ok(FittedIDR::from_json(&inner.to_string())?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.class as u8)
        }
    }
}
