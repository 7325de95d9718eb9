//! Batch variational sparse GP: collapsed bound, optimal `q(f_u)`, predictive
//! posterior and Adam training. Used to initialize the streaming models and as
//! the body of the sliding-window baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use crate::bound::{weighted_bound, BoundGradient, InducingCov, InducingMask};
use crate::error::{Error, Result};
use crate::kernel::{kernel_column, kernel_matrix, KernelParams};
use crate::linalg::{cholesky_psd, symmetrize, DEFAULT_JITTER};
use crate::optim::{OptimizerState, DEFAULT_LR, KEY_INDUCING, KEY_LOG_LENGTHSCALE, KEY_LOG_NOISE, KEY_LOG_VARIANCE};
use crate::rng::named_rng;

/// Predictive mean and latent-function variance at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDist {
    pub mean: f64,
    pub var: f64,
}

impl PredictiveDist {
    /// Clamps a slightly negative variance (round-off) to zero.
    pub fn new(mean: f64, var: f64) -> Self {
        if var < -1e-9 {
            log::debug!("predictive variance {var:e} clamped to zero");
        }
        Self { mean, var: var.max(0.0) }
    }
}

/// A trained batch model.
#[derive(Debug, Clone)]
pub struct VsgpModel {
    pub inducing: DMatrix<f64>,
    pub params: KernelParams,
    pub log_noise: f64,
    pub q_mean: DVector<f64>,
    pub q_cov: DMatrix<f64>,
    pub kuu_inv: DMatrix<f64>,
    pub jitter: f64,
}

impl VsgpModel {
    /// Builds the model with the optimal `q(f_u)` for the given data.
    pub fn from_data(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        inducing: DMatrix<f64>,
        params: KernelParams,
        log_noise: f64,
        jitter: f64,
    ) -> Result<Self> {
        let (q_mean, q_cov) = optimal_q_with_jitter(x, y, &inducing, &params, log_noise, jitter)?;
        let kuu = InducingCov::new(&inducing, &params, jitter)?;
        Ok(Self { inducing, params, log_noise, q_mean, q_cov, kuu_inv: kuu.inv, jitter })
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn predict(&self, xstar: &DVector<f64>) -> PredictiveDist {
        predict(self, xstar)
    }
}

/// Collapsed bound `F_V(U)` with the default jitter.
pub fn collapsed_bound(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
) -> Result<f64> {
    collapsed_bound_with_jitter(x, y, u, params, log_noise, DEFAULT_JITTER)
}

pub fn collapsed_bound_with_jitter(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    jitter: f64,
) -> Result<f64> {
    let w = DVector::from_element(y.len(), 1.0);
    Ok(weighted_bound(x, y, &w, u, params, log_noise, jitter, None)?.0)
}

/// Analytic gradient of the collapsed bound w.r.t. every inducing coordinate,
/// both kernel log-hyperparameters and the log noise variance.
pub fn bound_gradients(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
) -> Result<BoundGradient> {
    bound_gradients_with_jitter(x, y, u, params, log_noise, DEFAULT_JITTER).map(|(_, g)| g)
}

/// Bound value and gradient in one pass.
pub fn bound_gradients_with_jitter(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    jitter: f64,
) -> Result<(f64, BoundGradient)> {
    let w = DVector::from_element(y.len(), 1.0);
    let (v, g) = weighted_bound(x, y, &w, u, params, log_noise, jitter, Some(&InducingMask::All))?;
    Ok((v, g.expect("gradient requested")))
}

/// Optimal variational distribution `(μ, A)` with the default jitter.
pub fn optimal_q(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    optimal_q_with_jitter(x, y, u, params, log_noise, DEFAULT_JITTER)
}

pub fn optimal_q_with_jitter(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    jitter: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} inputs but {} targets", x.nrows(), y.len())));
    }
    let s = log_noise.exp();
    let kuu = InducingCov::new(u, params, jitter)?;
    let p = kernel_matrix(x, u, params)?;
    let b_inv = symmetrize(&(&kuu.eff + p.transpose() * &p / s));
    let b = cholesky_psd(&b_inv, 0.0)?;
    let mu = &kuu.eff * b.solve_vec(&(p.transpose() * y)) / s;
    let b_kuu = crate::linalg::solve_psd(&b, &kuu.eff)?;
    let a = symmetrize(&(&kuu.eff * b_kuu));
    Ok((mu, a))
}

/// Predictive mean `k_u*ᵀ K_uu⁻¹ μ` and variance
/// `k** - k_u*ᵀ K_uu⁻¹ k_u* + k_u*ᵀ K_uu⁻¹ A K_uu⁻¹ k_u*`. O(M²) per query.
pub fn predict(model: &VsgpModel, xstar: &DVector<f64>) -> PredictiveDist {
    let k = kernel_column(&model.inducing, xstar, &model.params).expect("query dimension matches model");
    let a = &model.kuu_inv * &k;
    let mean = a.dot(&model.q_mean);
    let var = model.params.variance() - k.dot(&a) + a.dot(&(&model.q_cov * &a));
    PredictiveDist::new(mean, var)
}

/// Applies one Adam ascent step on the bound to the parameters covered by
/// `g` (inducing rows listed in the gradient plus the three scalars).
pub(crate) fn adam_ascent(
    opt: &mut OptimizerState,
    inducing_key: &str,
    u: &mut DMatrix<f64>,
    params: &mut KernelParams,
    log_noise: &mut f64,
    g: &BoundGradient,
) {
    if !g.inducing_rows.is_empty() {
        let dim = u.ncols();
        let mut flat: Vec<f64> = Vec::with_capacity(g.inducing.len());
        let mut grad: Vec<f64> = Vec::with_capacity(g.inducing.len());
        for (r, &row) in g.inducing_rows.iter().enumerate() {
            for d in 0..dim {
                flat.push(u[(row, d)]);
                grad.push(-g.inducing[(r, d)]);
            }
        }
        opt.step(inducing_key, &mut flat, &grad);
        for (r, &row) in g.inducing_rows.iter().enumerate() {
            for d in 0..dim {
                u[(row, d)] = flat[r * dim + d];
            }
        }
    }
    opt.step_scalar(KEY_LOG_VARIANCE, &mut params.log_variance, -g.log_variance);
    opt.step_scalar(KEY_LOG_LENGTHSCALE, &mut params.log_lengthscale, -g.log_lengthscale);
    opt.step_scalar(KEY_LOG_NOISE, log_noise, -g.log_noise);
}

/// Options for [`fit_batch_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchFitConfig {
    pub num_inducing: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for BatchFitConfig {
    fn default() -> Self {
        Self { num_inducing: 10, iters: 200, lr: DEFAULT_LR, seed: 0, jitter: DEFAULT_JITTER }
    }
}

/// Starting point of a batch fit: inducing inputs drawn without replacement
/// from the data, `σ_f²` from the second moment of `y`, `ℓ` from the input
/// spread and `σ² = σ_f² / 10`.
pub fn initial_guess(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    num_inducing: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, KernelParams, f64)> {
    let n = x.nrows();
    if num_inducing == 0 || num_inducing > n || y.len() != n {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= M <= N with matching targets (M = {num_inducing}, N = {n}, |y| = {})",
            y.len()
        )));
    }
    let mut rng = named_rng(seed, "inducing_init");
    let mut idx = sample(&mut rng, n, num_inducing).into_vec();
    idx.sort_unstable();
    let u = DMatrix::from_fn(num_inducing, x.ncols(), |i, d| x[(idx[i], d)]);

    let second_moment = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let variance = second_moment.max(1e-6);
    let mut spread = 0.0;
    for d in 0..x.ncols() {
        let col = x.column(d);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        spread += var.sqrt();
    }
    spread /= x.ncols().max(1) as f64;
    let lengthscale = if spread > 1e-9 { spread } else { 1.0 };
    Ok((u, KernelParams::new(variance, lengthscale), (0.1 * variance).ln()))
}

/// Trains a batch model with the default learning rate and jitter.
pub fn fit_batch(x: &DMatrix<f64>, y: &DVector<f64>, m: usize, iters: usize, seed: u64) -> Result<VsgpModel> {
    fit_batch_with(x, y, &BatchFitConfig { num_inducing: m, iters, seed, ..BatchFitConfig::default() })
}

/// Initializes from [`initial_guess`], runs `iters` Adam steps on the negative
/// bound over every parameter, then attaches the optimal `q(f_u)`.
///
/// A factorization failure mid-run stops the optimization at the last good
/// parameters.
pub fn fit_batch_with(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &BatchFitConfig) -> Result<VsgpModel> {
    let (mut u, mut params, mut log_noise) = initial_guess(x, y, cfg.num_inducing, cfg.seed)?;
    let mut opt = crate::optim::adam_params(cfg.lr);
    for it in 0..cfg.iters {
        let g = match bound_gradients_with_jitter(x, y, &u, &params, log_noise, cfg.jitter) {
            Ok((_, g)) => g,
            Err(e) if it > 0 => {
                log::warn!("batch fit stopped at iteration {it}: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        let saved = (u.clone(), params, log_noise);
        adam_ascent(&mut opt, KEY_INDUCING, &mut u, &mut params, &mut log_noise, &g);
        if !params.is_finite() || !log_noise.is_finite() {
            (u, params, log_noise) = saved;
            break;
        }
    }
    VsgpModel::from_data(x, y, u, params, log_noise, cfg.jitter)
}
