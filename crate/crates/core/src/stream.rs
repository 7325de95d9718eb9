//! Prequential experiment driver: synthetic toy data, lag embedding,
//! the per-model streaming loop and the evaluation metrics.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive::{validate_lambda, AdaptiveState};
use crate::agp::agp_step;
use crate::agp_vsi::{agp_vsi_step, VsiModel};
use crate::error::{Error, Result};
use crate::fast_agp::{fast_agp_step, Thresholds};
use crate::linalg::DEFAULT_JITTER;
use crate::optim::{adam_params, OptimizerState, DEFAULT_LR};
use crate::rng::named_rng;
use crate::vsgp::{fit_batch_with, BatchFitConfig, PredictiveDist};
use crate::wvsgp::{wvsgp_step, WvsgpState};

/// Environment variable capping the worker count of multi-seed runs.
pub const THREADS_ENV: &str = "ADAPTIVE_SGP_THREADS";

/// Number of toy samples and how many fall in the first regime.
pub const TOY_LEN: usize = 500;
pub const TOY_FIRST_REGIME: usize = 300;
pub const TOY_NOISE_SD: f64 = 0.2;
/// Interval right after the frequency change used for tracking comparisons.
pub const TRANSITION_WINDOW: (f64, f64) = (3.2, 3.4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    FastAgp,
    Agp,
    AgpVsi,
    WVsgp,
    /// Previous observed target; no variance.
    Persistence,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::FastAgp => "fast-agp",
            ModelKind::Agp => "agp",
            ModelKind::AgpVsi => "agp-vsi",
            ModelKind::WVsgp => "w-vsgp",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fast-agp" => Ok(ModelKind::FastAgp),
            "agp" => Ok(ModelKind::Agp),
            "agp-vsi" => Ok(ModelKind::AgpVsi),
            "w-vsgp" => Ok(ModelKind::WVsgp),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(Error::InvalidConfig(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Forgetting factor, either explicit or `0.1^(1/T)` so the oldest sample of
/// a full window weighs 0.1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Auto,
    Value(f64),
}

impl LambdaSetting {
    pub fn resolve(&self, window_t: usize) -> f64 {
        match *self {
            LambdaSetting::Auto => 0.1f64.powf(1.0 / window_t as f64),
            LambdaSetting::Value(v) => v,
        }
    }
}

impl FromStr for LambdaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaSetting::Auto);
        }
        let v: f64 = s.parse().map_err(|_| Error::InvalidConfig(format!("bad lambda '{s}'")))?;
        validate_lambda(v)?;
        Ok(LambdaSetting::Value(v))
    }
}

/// How the 95% interval half-width is formed from `v*` and `σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiRule {
    /// `2 √(v* + σ²)`
    #[default]
    Sqrt,
    /// `2 (v* + σ²)`, kept for auditing the variance-valued form.
    Literal,
}

impl FromStr for CiRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sqrt" => Ok(CiRule::Sqrt),
            "literal" => Ok(CiRule::Literal),
            other => Err(Error::InvalidConfig(format!("unknown ci rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model_kind: ModelKind,
    pub window_t: usize,
    pub capacity_m: usize,
    pub lambda: LambdaSetting,
    pub r_th: f64,
    pub init_iters: usize,
    /// Per-sample iterations for AGP-VSI and w-VSGP.
    pub inner_iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub jitter: f64,
    pub ci_rule: CiRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Agp,
            window_t: 100,
            capacity_m: 10,
            lambda: LambdaSetting::Auto,
            r_th: 1e-4,
            init_iters: 200,
            inner_iters: 50,
            lr: DEFAULT_LR,
            seed: 0,
            jitter: DEFAULT_JITTER,
            ci_rule: CiRule::Sqrt,
        }
    }
}

impl ExperimentConfig {
    pub fn lambda_value(&self) -> f64 {
        self.lambda.resolve(self.window_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_t == 0 || self.capacity_m == 0 {
            return Err(Error::InvalidConfig("window_t and capacity_m must be positive".into()));
        }
        if self.capacity_m > self.window_t {
            return Err(Error::InvalidConfig(format!(
                "capacity_m ({}) exceeds window_t ({})",
                self.capacity_m, self.window_t
            )));
        }
        if self.model_kind == ModelKind::Agp && self.capacity_m < 2 {
            return Err(Error::InvalidConfig("agp needs capacity_m >= 2".into()));
        }
        validate_lambda(self.lambda_value())?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.jitter >= 0.0) || !(self.r_th >= 0.0) {
            return Err(Error::InvalidConfig("lr, jitter and r_th must be non-negative".into()));
        }
        Ok(())
    }
}

/// One prequential prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub step: usize,
    pub x: DVector<f64>,
    pub y_true: f64,
    pub pred_mean: f64,
    /// Latent predictive variance `v*`.
    pub pred_var: f64,
    /// `σ²` at prediction time.
    pub noise_var: f64,
    pub k_inducing: usize,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci95_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    pub total_time_us: u64,
    pub n_steps: usize,
    /// Steps whose model update failed and was skipped.
    pub n_failed_steps: usize,
}

/// Noise-free toy signal: amplitude rising linearly from 0.5 to 2 at 4 rad per
/// unit on `[0, 3]`, then amplitude 2 at 8 rad per unit.
pub fn toy_signal(t: f64) -> f64 {
    if t <= 3.0 {
        (0.5 + 1.5 * t / 3.0) * (4.0 * t).sin()
    } else {
        2.0 * (8.0 * t).sin()
    }
}

/// 500 sorted toy inputs on `[0, 5]` (300 in the first regime) with noisy
/// targets.
pub fn synth_toy(seed: u64) -> (DVector<f64>, DVector<f64>) {
    synth_toy_with(seed, false)
}

/// [`synth_toy`], optionally on an even grid instead of uniform draws.
pub fn synth_toy_with(seed: u64, grid: bool) -> (DVector<f64>, DVector<f64>) {
    let mut times = Vec::with_capacity(TOY_LEN);
    if grid {
        let h1 = 3.0 / TOY_FIRST_REGIME as f64;
        let h2 = 2.0 / (TOY_LEN - TOY_FIRST_REGIME) as f64;
        times.extend((0..TOY_FIRST_REGIME).map(|i| i as f64 * h1));
        times.extend((1..=TOY_LEN - TOY_FIRST_REGIME).map(|j| 3.0 + j as f64 * h2));
    } else {
        let mut rng = named_rng(seed, "data_times");
        let mut first: Vec<f64> = (0..TOY_FIRST_REGIME).map(|_| rng.random_range(0.0..=3.0)).collect();
        // (3, 5]: mirror a draw from [0, 2)
        let mut second: Vec<f64> = (0..TOY_LEN - TOY_FIRST_REGIME).map(|_| 5.0 - rng.random_range(0.0..2.0)).collect();
        first.sort_by(f64::total_cmp);
        second.sort_by(f64::total_cmp);
        times.extend(first);
        times.extend(second);
    }
    let mut rng = named_rng(seed, "data_noise");
    let noise = Normal::new(0.0, TOY_NOISE_SD).expect("valid sd");
    let targets: Vec<f64> = times.iter().map(|&t| toy_signal(t) + noise.sample(&mut rng)).collect();
    (DVector::from_vec(times), DVector::from_vec(targets))
}

/// Row `i` holds `series[i .. i + lags]`, target `series[i + lags - 1 + horizon]`.
pub fn lag_embed(series: &[f64], lags: usize, horizon: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if lags == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("lags and horizon must be positive".into()));
    }
    let n = series.len();
    if n <= lags + horizon {
        return Err(Error::TooShort(format!("{n} values for {lags} lags and horizon {horizon}")));
    }
    let rows = n - lags - horizon + 1;
    let x = DMatrix::from_fn(rows, lags, |i, j| series[i + j]);
    let y = DVector::from_fn(rows, |i, _| series[i + lags - 1 + horizon]);
    Ok((x, y))
}

/// Persistence forecast: the value `horizon` steps back. Records start at the
/// first predictable step.
pub fn persistence_baseline(series: &[f64], horizon: usize) -> Result<Vec<StreamRecord>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    if series.len() <= horizon {
        return Err(Error::TooShort(format!("{} values for horizon {horizon}", series.len())));
    }
    Ok((horizon..series.len())
        .map(|t| StreamRecord {
            step: t,
            x: DVector::from_element(1, t as f64),
            y_true: series[t],
            pred_mean: series[t - horizon],
            pred_var: 0.0,
            noise_var: 0.0,
            k_inducing: 0,
            elapsed_us: 0,
        })
        .collect())
}

pub fn mse(records: &[StreamRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(records.iter().map(|r| (r.y_true - r.pred_mean).powi(2)).sum::<f64>() / records.len() as f64)
}

pub fn mape(records: &[StreamRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if records.iter().any(|r| r.y_true.abs() <= 1e-9) {
        return Err(Error::MapeUndefined);
    }
    Ok(100.0 * records.iter().map(|r| ((r.y_true - r.pred_mean) / r.y_true).abs()).sum::<f64>() / records.len() as f64)
}

/// Percentage of records whose error lies strictly inside the 95% interval.
pub fn ci95_coverage(records: &[StreamRecord], rule: CiRule) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let inside = records
        .iter()
        .filter(|r| {
            let total = r.pred_var + r.noise_var;
            let half = match rule {
                CiRule::Sqrt => 2.0 * total.sqrt(),
                CiRule::Literal => 2.0 * total,
            };
            (r.y_true - r.pred_mean).abs() < half
        })
        .count();
    Ok(100.0 * inside as f64 / records.len() as f64)
}

/// MSE over records whose first input coordinate lies in `[lo, hi]`.
pub fn window_mse(records: &[StreamRecord], lo: f64, hi: f64) -> Result<f64> {
    let sel: Vec<StreamRecord> = records.iter().filter(|r| r.x[0] >= lo && r.x[0] <= hi).cloned().collect();
    mse(&sel)
}

/// Addition threshold of an adaptive state.
pub fn threshold_tot(state: &AdaptiveState) -> f64 {
    state.threshold_tot()
}

enum Runner {
    Fast(AdaptiveState, Thresholds),
    Agp(AdaptiveState, OptimizerState, f64),
    Vsi(VsiModel, OptimizerState, usize),
    W(WvsgpState, OptimizerState, usize),
    Persistence(f64),
}

impl Runner {
    fn predict(&self, x: &DVector<f64>) -> (PredictiveDist, f64, usize) {
        match self {
            Runner::Fast(s, _) | Runner::Agp(s, _, _) => (s.adaptive_predict(x), s.noise_var(), s.num_inducing()),
            Runner::Vsi(m, _, _) => (m.predict(x), m.noise_var(), m.num_inducing()),
            Runner::W(s, _, _) => (s.model.predict(x), s.model.noise_var(), s.model.num_inducing()),
            Runner::Persistence(last) => (PredictiveDist { mean: *last, var: 0.0 }, 0.0, 0),
        }
    }

    fn update(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        match self {
            Runner::Fast(s, th) => fast_agp_step(s, x, y, th).map(|_| ()),
            Runner::Agp(s, opt, r_th) => agp_step(s, opt, x, y, *r_th).map(|_| ()),
            Runner::Vsi(m, opt, iters) => agp_vsi_step(m, opt, x, y, *iters).map(|_| ()),
            Runner::W(s, opt, iters) => wvsgp_step(s, opt, x, y, *iters).map(|_| ()),
            Runner::Persistence(last) => {
                *last = y;
                Ok(())
            }
        }
    }

    fn snapshot(&self) -> Option<Runner> {
        Some(match self {
            Runner::Fast(s, th) => Runner::Fast(s.clone(), *th),
            Runner::Agp(s, o, r) => Runner::Agp(s.clone(), o.clone(), *r),
            Runner::Vsi(m, o, i) => Runner::Vsi(m.clone(), o.clone(), *i),
            Runner::W(s, o, i) => Runner::W(s.clone(), o.clone(), *i),
            Runner::Persistence(_) => return None,
        })
    }
}

fn build_runner(config: &ExperimentConfig, x0: &DMatrix<f64>, y0: &DVector<f64>) -> Result<Runner> {
    let t = config.window_t;
    if config.model_kind == ModelKind::Persistence {
        return Ok(Runner::Persistence(y0[y0.len() - 1]));
    }
    let fit = BatchFitConfig {
        num_inducing: config.capacity_m,
        iters: config.init_iters,
        lr: config.lr,
        seed: config.seed,
        jitter: config.jitter,
    };
    let model = fit_batch_with(x0, y0, &fit)?;
    let lambda = config.lambda_value();
    Ok(match config.model_kind {
        ModelKind::FastAgp => Runner::Fast(
            AdaptiveState::from_model(&model, x0, y0, lambda, t, config.capacity_m)?,
            Thresholds { r_th: config.r_th, r_tot: None },
        ),
        ModelKind::Agp => Runner::Agp(
            AdaptiveState::from_model(&model, x0, y0, lambda, t, config.capacity_m)?,
            adam_params(config.lr),
            config.r_th,
        ),
        ModelKind::AgpVsi => {
            Runner::Vsi(VsiModel::from_model(&model, x0, y0, lambda, t)?, adam_params(config.lr), config.inner_iters)
        }
        ModelKind::WVsgp => Runner::W(WvsgpState::new(model, x0, y0, t)?, adam_params(config.lr), config.inner_iters),
        ModelKind::Persistence => unreachable!(),
    })
}

/// Trains the configured model in batch on the first `window_t` samples, then
/// streams the rest: each sample is predicted before the model sees it.
/// A failed update is logged, the model rolls back to its pre-step state and
/// the stream continues.
pub fn run_experiment(config: &ExperimentConfig, x_all: &DMatrix<f64>, y_all: &DVector<f64>) -> Result<(Vec<StreamRecord>, MetricSummary)> {
    config.validate()?;
    let n = x_all.nrows();
    if y_all.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} inputs but {} targets", y_all.len())));
    }
    let t = config.window_t;
    if n < t + 1 {
        return Err(Error::TooShort(format!("{n} samples but window_t + 1 = {} needed", t + 1)));
    }
    let x0 = x_all.rows(0, t).into_owned();
    let y0 = y_all.rows(0, t).into_owned();
    let mut runner = build_runner(config, &x0, &y0)?;

    let mut records = Vec::with_capacity(n - t);
    let mut failed = 0;
    for i in t..n {
        let x = x_all.row(i).transpose();
        let y = y_all[i];
        let start = Instant::now();
        let (pred, noise_var, k) = runner.predict(&x);
        let backup = runner.snapshot();
        if let Err(e) = runner.update(&x, y) {
            log::warn!("step {i}: update failed ({e}); sample skipped");
            failed += 1;
            if let Some(b) = backup {
                runner = b;
            }
        }
        let elapsed_us = start.elapsed().as_micros() as u64;
        records.push(StreamRecord {
            step: i,
            x,
            y_true: y,
            pred_mean: pred.mean,
            pred_var: pred.var,
            noise_var,
            k_inducing: k,
            elapsed_us,
        });
    }
    let summary = summarize(&records, config.model_kind, config.ci_rule, failed)?;
    Ok((records, summary))
}

/// Metrics over a finished stream; no coverage for persistence.
pub fn summarize(records: &[StreamRecord], kind: ModelKind, rule: CiRule, n_failed_steps: usize) -> Result<MetricSummary> {
    Ok(MetricSummary {
        mse: mse(records)?,
        ci95_coverage: if kind == ModelKind::Persistence { None } else { Some(ci95_coverage(records, rule)?) },
        mape: mape(records).ok(),
        total_time_us: records.iter().map(|r| r.elapsed_us).sum(),
        n_steps: records.len(),
        n_failed_steps,
    })
}

/// Toy inputs as a one-column matrix.
pub fn toy_dataset(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let (t, y) = synth_toy(seed);
    (DMatrix::from_column_slice(t.len(), 1, t.as_slice()), y)
}

fn worker_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Maps `f` over `items` on the worker pool; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    worker_pool().install(|| items.par_iter().map(&f).collect())
}

/// Runs the toy experiment once per seed (data and initialization both keyed
/// by the seed), in parallel, returning results in seed order.
pub fn run_toy_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Vec<Result<(Vec<StreamRecord>, MetricSummary)>> {
    parallel_map(seeds, |&seed| {
        let (x, y) = toy_dataset(seed);
        run_experiment(&ExperimentConfig { seed, ..config.clone() }, &x, &y)
    })
}
