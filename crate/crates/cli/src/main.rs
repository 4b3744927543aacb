//! `orthoml` command line: generate, estimate, tune, refute, bench.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 estimation error. Errors are printed to stderr as a JSON object.

mod config;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use orthoml::refute::{overlap_diagnostic, run_refuters_against};
use orthoml::runtime::available_cores;
use orthoml::{
    benchmark, estimate_timed, estimate_with_nuisances, generate_synthetic, grid_search, load_csv, Dataset64,
    ErrorClass, Executor, GroundTruth64, NuisanceSpec,
};
use serde_json::json;

use config::{DataSource, RunConfig};
use report::{write_text, Report};

#[derive(Parser)]
#[command(name = "orthoml", version, about = "Double machine learning treatment-effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (with ground-truth columns) to CSV.
    Generate(Common),
    /// Estimate the average and conditional treatment effect.
    Estimate(Common),
    /// Grid-search the nuisance learners.
    Tune(Common),
    /// Run the configured refutation tests.
    Refute(Common),
    /// Time the pipeline across worker counts and write a CSV.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads, overriding the config.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Replaces every seed in the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output path, overriding the config.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    class: ErrorClass,
    kind: String,
    message: String,
}

impl CliError {
    pub fn config(kind: &str, message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Config, kind: kind.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Estimation => 4,
        }
    }

    fn to_json(&self) -> String {
        let class = match self.class {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Estimation => "estimation",
        };
        json!({ "error": { "class": class, "kind": self.kind, "message": self.message, "exit_code": self.exit_code() } })
            .to_string()
    }
}

impl From<orthoml::Error> for CliError {
    fn from(e: orthoml::Error) -> Self {
        Self { class: e.class(), kind: e.kind().into(), message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Config with flag overrides applied.
struct Run {
    config: RunConfig,
    exec: Executor,
    out: Option<PathBuf>,
}

impl Run {
    fn prepare(common: &Common) -> Result<Self, CliError> {
        let mut config = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.override_seed(seed);
        }
        if let Some(w) = common.workers {
            config.workers = Some(w);
        }
        if let Some(out) = &common.out {
            config.out = Some(out.clone());
        }
        let workers = config.workers.unwrap_or_else(available_cores);
        config.workers = Some(workers);
        let exec = Executor::new(workers)?;
        let out = config.out.clone();
        Ok(Self { config, exec, out })
    }

    fn report(&self, command: &str) -> Result<Report, CliError> {
        Report::new(command, &self.config, self.exec.workers())
    }

    fn load_data(&self) -> Result<(Dataset64, Option<GroundTruth64>), CliError> {
        match &self.config.data {
            DataSource::Synthetic(dgp) => {
                let (data, truth) = generate_synthetic(dgp)?;
                Ok((data, Some(truth)))
            }
            DataSource::Csv(src) => {
                let data = load_csv(&src.path, &src.treatment, &src.outcome, &src.covariates, src.discrete)?;
                Ok((data, None))
            }
        }
    }
}

fn generate(run: &Run) -> Result<(), CliError> {
    let DataSource::Synthetic(dgp) = &run.config.data else {
        return Err(CliError::config("invalid_spec", "generate needs a [data.synthetic] source"));
    };
    let out = run.out.as_deref().ok_or_else(|| CliError::config("missing_output", "generate needs --out or `out`"))?;
    let (data, truth) = generate_synthetic::<f64>(dgp)?;
    data.save_csv(out, run.config.write_ground_truth.then_some(&truth))?;
    let summary = json!({ "path": out, "n": data.n(), "d": data.d(), "true_ate": truth.true_ate });
    println!("{summary}");
    Ok(())
}

fn estimate(run: &Run) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = run.config.dml()?;
    let (data, truth) = run.load_data()?;
    let (est, timings) = estimate_timed(&data, spec, &run.exec)?;
    let names = data.feature_names();
    let labels = std::iter::once("intercept".to_string()).chain(est.het_features.iter().map(|&j| names[j].clone()));
    let coefficients: Vec<_> = labels
        .zip(est.cate_model.beta.iter())
        .enumerate()
        .map(|(i, (name, &coef))| json!({ "term": name, "coef": coef, "se": est.cate_model.cov[[i, i]].max(0.0).sqrt() }))
        .collect();
    let mut report = run.report("estimate")?;
    report
        .set("seed", spec.seed)?
        .set("n", data.n())?
        .set("d", data.d())?
        .set("estimate", &est)?
        .set("cate_coefficients", coefficients)?
        .set("timings", timings)?
        .set("true_ate", truth.map(|t| t.true_ate))?
        .set("wall_seconds", started.elapsed().as_secs_f64())?;
    report.emit(run.out.as_deref())
}

fn tune(run: &Run) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = run.config.dml()?;
    let (data, _) = run.load_data()?;
    let mut report = run.report("tune")?;
    let mut any = false;
    for (name, nuisance, target) in [("outcome", &spec.y_spec, data.y()), ("treatment", &spec.t_spec, data.t())] {
        if let NuisanceSpec::Grid(grid) = nuisance {
            let result = grid_search(data.x(), target, grid, &run.exec)?;
            report.set(name, result)?;
            any = true;
        }
    }
    if !any {
        return Err(CliError::config("missing_grid", "tune needs a parameter grid for y_spec or t_spec"));
    }
    report.set("wall_seconds", started.elapsed().as_secs_f64())?;
    report.emit(run.out.as_deref())
}

fn refute(run: &Run) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = run.config.dml()?;
    let settings = run
        .config
        .refute
        .as_ref()
        .ok_or_else(|| CliError::config("missing_section", "config has no [refute] section"))?;
    if settings.tests.is_empty() {
        return Err(CliError::config("invalid_spec", "refute.tests is empty"));
    }
    let (data, _) = run.load_data()?;
    let (est, _, nuis) = estimate_with_nuisances(&data, spec, &run.exec)?;
    let reports = run_refuters_against(&data, spec, &run.exec, settings, &est)?;
    let overlap = if data.is_discrete() { Some(overlap_diagnostic(&nuis, settings.overlap_eta)?) } else { None };
    let mut report = run.report("refute")?;
    report
        .set("seed", settings.seed)?
        .set("estimate", &est)?
        .set("refutations", &reports)?
        .set("all_passed", reports.iter().all(|r| r.passed))?
        .set("overlap", overlap)?
        .set("wall_seconds", started.elapsed().as_secs_f64())?;
    report.emit(run.out.as_deref())
}

fn stages_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_stages.csv"))
}

fn bench(run: &Run) -> Result<(), CliError> {
    let spec = run.config.dml()?;
    let settings = run
        .config
        .bench
        .as_ref()
        .ok_or_else(|| CliError::config("missing_section", "config has no [bench] section"))?;
    let report = benchmark(&settings.sizes, &settings.workers, spec, settings.seed)?;
    match run.out.as_deref() {
        Some(out) => {
            write_text(Some(out), &report.to_csv())?;
            write_text(Some(&stages_path(out)), &report.stages_csv())?;
        }
        None => write_text(None, &format!("{}\n{}", report.to_csv(), report.stages_csv()))?,
    }
    Ok(())
}

type Action = fn(&Run) -> Result<(), CliError>;

fn dispatch(command: &Command) -> Result<(), CliError> {
    let (common, action): (&Common, Action) = match command {
        Command::Generate(c) => (c, generate),
        Command::Estimate(c) => (c, estimate),
        Command::Tune(c) => (c, tune),
        Command::Refute(c) => (c, refute),
        Command::Bench(c) => (c, bench),
    };
    action(&Run::prepare(common)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
