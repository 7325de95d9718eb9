//! Adaptive SGP with an explicit Gaussian `q(f_u) = N(μ, L Lᵀ)` trained by
//! many Adam iterations per sample on the λ-weighted ELBO (AGP-VSI).
//!
//! The expectation of every Gaussian log-likelihood term under `q` is taken
//! in closed form, so the objective is deterministic:
//!
//! ```text
//! E = Σ w [-½ log 2πσ² - r²/2σ²] - tr(S K⁻¹ s_k K⁻¹)/2σ²
//!     - (w_ksum - tr(K⁻¹ s_k))/2σ² - KL(q ‖ p(f_u))
//! ```
//!
//! with `r = y - K_xu K⁻¹ μ`, `S = L Lᵀ` and an unweighted KL term.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::adaptive::{lambda_weights, validate_lambda, AdaptiveConfig, AdaptiveState};
use crate::bound::{chain_kernel, check_data, scale_rows, BoundGradient, InducingCov};
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, KernelParams};
use crate::linalg::{cholesky_psd, logdet, symmetrize};
use crate::optim::{OptimizerState, KEY_INDUCING, KEY_Q_CHOL, KEY_Q_MEAN};
use crate::vsgp::{adam_ascent, PredictiveDist, VsgpModel};
use crate::window::SlidingWindow;

/// Explicit variational distribution over the inducing outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalQ {
    pub mean: DVector<f64>,
    /// Lower-triangular factor of the covariance; positive diagonal.
    pub cov_chol: DMatrix<f64>,
}

impl VariationalQ {
    /// Factors `cov` (adding jitter only if needed).
    pub fn from_cov(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let f = cholesky_psd(&symmetrize(cov), 0.0)?;
        Ok(Self { mean, cov_chol: f.lower() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.cov_chol * self.cov_chol.transpose()
    }

    /// Unconstrained coordinates of the factor: lower triangle row by row,
    /// with `log L_ii` in place of each diagonal entry.
    pub fn chol_params(&self) -> Vec<f64> {
        let k = self.dim();
        let mut v = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in 0..i {
                v.push(self.cov_chol[(i, j)]);
            }
            v.push(self.cov_chol[(i, i)].ln());
        }
        v
    }

    pub fn set_chol_params(&mut self, v: &[f64]) {
        let k = self.dim();
        let mut it = v.iter();
        self.cov_chol = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..i {
                self.cov_chol[(i, j)] = *it.next().expect("packed length");
            }
            self.cov_chol[(i, i)] = it.next().expect("packed length").exp();
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov_chol.iter()).all(|v| v.is_finite())
    }
}

/// Gradient of the λ-weighted ELBO.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    /// Inducing points (all rows), kernel and noise parts.
    pub bound: BoundGradient,
    pub q_mean: DVector<f64>,
    /// Same packing as [`VariationalQ::chol_params`].
    pub q_chol: Vec<f64>,
}

impl ElboGradient {
    /// Flattens as (bound part, q mean, packed factor).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.bound.to_vec();
        v.extend(self.q_mean.iter());
        v.extend(self.q_chol.iter());
        v
    }
}

/// λ-weighted ELBO over a window whose samples carry weights `w`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_lambda(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    q: &VariationalQ,
    jitter: f64,
) -> Result<f64> {
    Ok(elbo_impl(x, y, w, u, params, log_noise, q, jitter, false)?.0)
}

/// Value and analytic gradient of [`elbo_lambda`] w.r.t. every inducing
/// coordinate, the kernel and noise log-parameters, `μ` and the packed factor.
#[allow(clippy::too_many_arguments)]
pub fn elbo_lambda_gradients(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    q: &VariationalQ,
    jitter: f64,
) -> Result<(f64, ElboGradient)> {
    let (v, g) = elbo_impl(x, y, w, u, params, log_noise, q, jitter, true)?;
    Ok((v, g.expect("gradient requested")))
}

#[allow(clippy::too_many_arguments)]
fn elbo_impl(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    q: &VariationalQ,
    jitter: f64,
    want_grad: bool,
) -> Result<(f64, Option<ElboGradient>)> {
    check_data(x, y, w, u)?;
    let k = u.nrows();
    if q.dim() != k || q.cov_chol.shape() != (k, k) {
        return Err(Error::DimensionMismatch(format!("q has dimension {}, inducing set {}", q.dim(), k)));
    }
    let s = log_noise.exp();
    let kuu = InducingCov::new(u, params, jitter)?;
    let p = kernel_matrix(x, u, params)?;
    let wp = scale_rows(&p, w);
    let s_k = symmetrize(&(p.transpose() * &wp));

    let m_t = &kuu.inv * &q.mean;
    let r = y - &p * &m_t;
    let wr = r.component_mul(w);
    let cov = q.cov();
    let h = symmetrize(&(&kuu.inv * &cov * &kuu.inv));

    let sum_w = w.sum();
    let w_ksum = params.variance() * sum_w;
    let r_w_r = r.dot(&wr);
    let tr_h_sk = h.component_mul(&s_k).sum();
    let tr_ki_sk = kuu.inv.component_mul(&s_k).sum();
    let log_det_s: f64 = 2.0 * q.cov_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let kl = 0.5 * (kuu.inv.component_mul(&cov).sum() + q.mean.dot(&m_t) - k as f64 + logdet(&kuu.chol) - log_det_s);

    let value = -0.5 * sum_w * (2.0 * PI * s).ln() - 0.5 * r_w_r / s - 0.5 * tr_h_sk / s - 0.5 * (w_ksum - tr_ki_sk) / s - kl;
    if !want_grad {
        return Ok((value, None));
    }

    let g = p.transpose() * &wr / s;
    let ki_g = &kuu.inv * &g;
    let ki_sk_ki = &kuu.inv * &s_k * &kuu.inv;
    let ki_sk_h = &kuu.inv * &s_k * &h;

    let d_mean = &ki_g - &m_t;

    let l_inv = q
        .cov_chol
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::NotPsd { jitter: 0.0 })?;
    let s_inv = l_inv.transpose() * l_inv;
    let g_s = -(0.5 / s) * &ki_sk_ki - 0.5 * &kuu.inv + 0.5 * s_inv;
    let d_l = 2.0 * symmetrize(&g_s) * &q.cov_chol;
    let mut d_chol = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in 0..i {
            d_chol.push(d_l[(i, j)]);
        }
        d_chol.push(d_l[(i, i)] * q.cov_chol[(i, i)]);
    }

    let ki_g_mt = &ki_g * m_t.transpose();
    let g_uu = symmetrize(
        &(-0.5 * (&ki_g_mt + ki_g_mt.transpose()) + (0.5 / s) * (&ki_sk_h + ki_sk_h.transpose()) - (0.5 / s) * &ki_sk_ki
            + 0.5 * &h
            + 0.5 * (&m_t * m_t.transpose())
            - 0.5 * &kuu.inv),
    );
    let g_p = (&wr * m_t.transpose()) / s - (&wp * &h) / s + (&wp * &kuu.inv) / s;

    let rows: Vec<usize> = (0..k).collect();
    let (d_u, d_logvar, d_logl) = chain_kernel(&g_uu, &g_p, x, u, &p, &kuu, params, &rows);

    let d_s = -0.5 * sum_w / s + 0.5 * r_w_r / (s * s) + 0.5 * tr_h_sk / (s * s) + 0.5 * (w_ksum - tr_ki_sk) / (s * s);

    let grad = ElboGradient {
        bound: BoundGradient {
            inducing_rows: rows,
            inducing: d_u,
            log_variance: d_logvar - 0.5 * w_ksum / s,
            log_lengthscale: d_logl,
            log_noise: s * d_s,
        },
        q_mean: d_mean,
        q_chol: d_chol,
    };
    Ok((value, Some(grad)))
}

/// Streaming AGP-VSI model: window, parameters and explicit `q`.
#[derive(Debug, Clone)]
pub struct VsiModel {
    pub(crate) window: SlidingWindow,
    pub inducing: DMatrix<f64>,
    pub params: KernelParams,
    pub log_noise: f64,
    pub q: VariationalQ,
    pub lambda: f64,
    pub jitter: f64,
    kuu_inv: DMatrix<f64>,
}

impl VsiModel {
    /// Model over the last `window_t` samples with `q` at the λ-weighted
    /// optimum for the given parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        inducing: DMatrix<f64>,
        params: KernelParams,
        log_noise: f64,
        lambda: f64,
        window_t: usize,
        jitter: f64,
    ) -> Result<Self> {
        validate_lambda(lambda)?;
        let k = inducing.nrows();
        let config = AdaptiveConfig { lambda, window_t, capacity_m: k, jitter };
        let adaptive = AdaptiveState::new(config, x, y, inducing.clone(), params, log_noise)?;
        let (mean, cov) = adaptive.adaptive_q();
        let q = VariationalQ::from_cov(mean, &cov)?;
        Ok(Self {
            window: SlidingWindow::from_data(x, y, window_t),
            inducing,
            params,
            log_noise,
            q,
            lambda,
            jitter,
            kuu_inv: adaptive.kuu_inv().clone(),
        })
    }

    /// Starts from a trained batch model and its training data.
    pub fn from_model(model: &VsgpModel, x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, window_t: usize) -> Result<Self> {
        Self::new(x, y, model.inducing.clone(), model.params, model.log_noise, lambda, window_t, model.jitter)
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window_inputs(&self) -> DMatrix<f64> {
        self.window.inputs()
    }

    pub fn window_targets(&self) -> DVector<f64> {
        self.window.targets()
    }

    /// ELBO of the current parameters over the current window.
    pub fn elbo(&self) -> Result<f64> {
        let (x, y) = (self.window.inputs(), self.window.targets());
        let w = lambda_weights(y.len(), self.lambda)?;
        elbo_lambda(&x, &y, &w, &self.inducing, &self.params, self.log_noise, &self.q, self.jitter)
    }

    /// Predictive distribution with the current explicit `q`. O(M²).
    pub fn predict(&self, xstar: &DVector<f64>) -> PredictiveDist {
        let k = crate::kernel::kernel_column(&self.inducing, xstar, &self.params).expect("query dimension matches model");
        let a = &self.kuu_inv * &k;
        let la = self.q.cov_chol.transpose() * &a;
        let var = self.params.variance() - k.dot(&a) + la.norm_squared();
        PredictiveDist::new(a.dot(&self.q.mean), var)
    }

    fn refresh_kuu_inv(&mut self) -> Result<()> {
        self.kuu_inv = InducingCov::new(&self.inducing, &self.params, self.jitter)?.inv;
        Ok(())
    }
}

/// One AGP-VSI update: predict, slide the window, then `inner_iters` Adam
/// steps on the λ-weighted ELBO over `q`, every inducing point, the kernel
/// and the noise, warm-started from the previous solution.
///
/// A factorization failure ends the inner loop with the last good parameters.
pub fn agp_vsi_step(
    model: &mut VsiModel,
    opt: &mut OptimizerState,
    x_new: &DVector<f64>,
    y_new: f64,
    inner_iters: usize,
) -> Result<PredictiveDist> {
    let pred = model.predict(x_new);
    model.window.push(x_new.clone(), y_new);
    if inner_iters == 0 {
        return Ok(pred);
    }
    let x = model.window.inputs();
    let y = model.window.targets();
    let w = lambda_weights(y.len(), model.lambda)?;
    let start = (model.inducing.clone(), model.params, model.log_noise, model.q.clone());

    for it in 0..inner_iters {
        let g = match elbo_lambda_gradients(&x, &y, &w, &model.inducing, &model.params, model.log_noise, &model.q, model.jitter) {
            Ok((_, g)) => g,
            Err(e @ (Error::NotPsd { .. } | Error::NotSymmetric { .. })) => {
                log::warn!("AGP-VSI inner loop stopped at iteration {it}: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        let saved = (model.inducing.clone(), model.params, model.log_noise, model.q.clone());
        adam_ascent(opt, KEY_INDUCING, &mut model.inducing, &mut model.params, &mut model.log_noise, &g.bound);
        let mut mean: Vec<f64> = model.q.mean.iter().copied().collect();
        let neg: Vec<f64> = g.q_mean.iter().map(|v| -v).collect();
        opt.step(KEY_Q_MEAN, &mut mean, &neg);
        model.q.mean = DVector::from_vec(mean);
        let mut chol = model.q.chol_params();
        let neg: Vec<f64> = g.q_chol.iter().map(|v| -v).collect();
        opt.step(KEY_Q_CHOL, &mut chol, &neg);
        model.q.set_chol_params(&chol);

        let finite = model.params.is_finite()
            && model.log_noise.is_finite()
            && model.q.is_finite()
            && model.inducing.iter().all(|v| v.is_finite());
        if !finite {
            (model.inducing, model.params, model.log_noise, model.q) = saved;
            break;
        }
    }
    if let Err(e) = model.refresh_kuu_inv() {
        log::warn!("AGP-VSI update rejected: {e}");
        (model.inducing, model.params, model.log_noise, model.q) = start;
        model.refresh_kuu_inv()?;
    }
    Ok(pred)
}
