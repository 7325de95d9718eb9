//! `adaptive-sgp`: prequential streaming experiments from the command line.
//!
//! Exit codes: 0 on success, 1 for bad flags, unreadable files or schema
//! violations, 2 when a numerical failure aborted a run.

mod config;
mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_sgp::stream::{
    lag_embed, parallel_map, run_experiment, synth_toy_with, window_mse, ExperimentConfig, LambdaSetting,
    MetricSummary, ModelKind, StreamRecord, TRANSITION_WINDOW,
};
use adaptive_sgp::Error;
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use data::Dataset;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPsd { .. } | Error::NotSymmetric { .. } | Error::SchurNotPositive { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "adaptive-sgp", version, about = "Streaming adaptive sparse GP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one toy dataset (regime change at t = 3) as CSV.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Evenly spaced inputs instead of sorted uniform draws.
        #[arg(long)]
        grid: bool,
    },
    /// Stream a dataset through one model and write records and a summary.
    Run {
        #[arg(long)]
        model: Option<ModelKind>,
        /// Data CSV; without it every seed streams its own toy dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Transition-window MSE for several forgetting factors.
    SweepLambda {
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a univariate series into a lag-embedded data CSV.
    Embed {
        #[arg(long)]
        lags: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file plus per-field overrides.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds, counted up from the configured seed.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long)]
    window_t: Option<usize>,
    #[arg(long)]
    capacity_m: Option<usize>,
    #[arg(long)]
    lambda: Option<LambdaSetting>,
    #[arg(long)]
    r_th: Option<f64>,
    #[arg(long)]
    init_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    ci_rule: Option<adaptive_sgp::stream::CiRule>,
}

impl Common {
    fn resolve(&self, model: Option<ModelKind>) -> Result<ExperimentConfig, CliError> {
        let mut cfg = config::load(self.config.as_deref())?;
        if let Some(m) = model {
            cfg.model_kind = m;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(window_t, capacity_m, lambda, r_th, init_iters, inner_iters, lr, seed, jitter, ci_rule);
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed_list(&self, cfg: &ExperimentConfig) -> Vec<u64> {
        (0..self.seeds).map(|i| cfg.seed + i).collect()
    }
}

fn toy(seed: u64, grid: bool) -> Dataset {
    let (t, y) = synth_toy_with(seed, grid);
    let x = DMatrix::from_column_slice(t.len(), 1, t.as_slice());
    Dataset { t, x, y }
}

struct SeedRun {
    seed: u64,
    records: Vec<StreamRecord>,
    summary: MetricSummary,
    /// Time stamp of every record.
    times: Vec<f64>,
}

/// Runs every seed, on `data` if given or else on that seed's toy dataset.
fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], data: Option<&Dataset>) -> Result<Vec<SeedRun>, CliError> {
    let results = parallel_map(seeds, |&seed| {
        let owned;
        let d = match data {
            Some(d) => d,
            None => {
                owned = toy(seed, false);
                &owned
            }
        };
        let (records, summary) = run_experiment(&ExperimentConfig { seed, ..cfg.clone() }, &d.x, &d.y)?;
        let times = records.iter().map(|r| d.t[r.step]).collect();
        Ok::<_, Error>(SeedRun { seed, records, summary, times })
    });
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

/// Single-seed summaries pass through; several seeds average the metrics and
/// add up time and steps.
fn aggregate(runs: &[SeedRun], kind: ModelKind) -> serde_json::Value {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&MetricSummary) -> Option<f64>| -> Option<f64> {
        runs.iter().map(|r| f(&r.summary)).sum::<Option<f64>>().map(|s| s / n)
    };
    let summary = MetricSummary {
        mse: mean(&|s| Some(s.mse)).unwrap_or(f64::NAN),
        ci95_coverage: if kind == ModelKind::Persistence { None } else { mean(&|s| s.ci95_coverage) },
        mape: mean(&|s| s.mape),
        total_time_us: runs.iter().map(|r| r.summary.total_time_us).sum(),
        n_steps: runs.iter().map(|r| r.summary.n_steps).sum(),
        n_failed_steps: runs.iter().map(|r| r.summary.n_failed_steps).sum(),
    };
    let mut v = serde_json::to_value(summary).expect("summary serializes");
    v["n_seeds"] = runs.len().into();
    v
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(
    model: Option<ModelKind>,
    data: Option<&Path>,
    common: &Common,
    records: Option<&Path>,
    summary: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = common.resolve(model)?;
    let dataset = data.map(data::read_dataset).transpose()?;
    let runs = run_seeds(&cfg, &common.seed_list(&cfg), dataset.as_ref())?;
    if let Some(p) = records {
        let rows: Vec<(u64, Vec<StreamRecord>)> = runs.iter().map(|r| (r.seed, r.records.clone())).collect();
        data::write_records(p, &rows)?;
    }
    let json = aggregate(&runs, cfg.model_kind);
    let text = serde_json::to_string_pretty(&json).expect("json");
    match summary {
        Some(p) => write_text(p, &(text + "\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_sweep(values: &[f64], model: Option<ModelKind>, data: Option<&Path>, common: &Common, out: &Path) -> Result<(), CliError> {
    let base = common.resolve(model)?;
    let dataset = data.map(data::read_dataset).transpose()?;
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    let io = |e: csv::Error| CliError::Input(format!("cannot write {}: {e}", out.display()));
    w.write_record(["lambda", "transition_mse", "mse", "n_seeds"]).map_err(io)?;
    let (lo, hi) = TRANSITION_WINDOW;
    for &lambda in &values {
        let cfg = ExperimentConfig { lambda: LambdaSetting::Value(lambda), ..base.clone() };
        cfg.validate()?;
        let runs = run_seeds(&cfg, &common.seed_list(&cfg), dataset.as_ref())?;
        let mut transition = 0.0;
        for r in &runs {
            // select by time stamp, which need not be the first input column
            let timed: Vec<StreamRecord> = r
                .records
                .iter()
                .zip(&r.times)
                .map(|(rec, &t)| StreamRecord { x: DVector::from_element(1, t), ..rec.clone() })
                .collect();
            transition += window_mse(&timed, lo, hi)
                .map_err(|_| CliError::Input(format!("no samples with t in [{lo}, {hi}] to score")))?;
        }
        let n = runs.len() as f64;
        let mse = runs.iter().map(|r| r.summary.mse).sum::<f64>() / n;
        w.write_record([data::fmt_f64(lambda), data::fmt_f64(transition / n), data::fmt_f64(mse), runs.len().to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))
}

fn cmd_embed(lags: usize, horizon: usize, input: &Path, out: &Path) -> Result<(), CliError> {
    let series = data::read_series(input)?;
    let (x, y) = lag_embed(&series, lags, horizon)?;
    // t is the series index of the target
    let t = DVector::from_fn(y.len(), |i, _| (i + lags - 1 + horizon) as f64);
    data::write_dataset(out, &Dataset { t, x, y })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { seed, out, grid } => data::write_dataset(&out, &toy(seed, grid)),
        Command::Run { model, data, common, records, summary } => {
            cmd_run(model, data.as_deref(), &common, records.as_deref(), summary.as_deref())
        }
        Command::SweepLambda { values, model, data, common, out } => {
            cmd_sweep(&values, model, data.as_deref(), &common, &out)
        }
        Command::Embed { lags, horizon, input, out } => cmd_embed(lags, horizon, &input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("adaptive-sgp: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaptive-sgp: {e}");
            ExitCode::from(e.code())
        }
    }
}
