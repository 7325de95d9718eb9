//! Forgetting-factor quantities shared by fast-AGP and AGP: the λ-weighted
//! bound, the adaptive `q(f_u)`, the adaptive predictive distribution and the
//! relevance scores that drive inducing-set maintenance.
//!
//! The state keeps λ-weighted cross moments over the window so that
//! streaming updates never touch the full window:
//!
//! * `s_y = K_ux Λ y`
//! * `s_k = K_ux Λ K_xu`
//! * `w_ksum = Σ λ^{t-t'} k_{t't'}`
//! * `b_lam = (K_uu + σ⁻² s_k)⁻¹`
//!
//! `K_uu` always carries the jitter chosen at its last from-scratch
//! factorization.

use nalgebra::{DMatrix, DVector};

use crate::bound::{weighted_bound, BoundGradient, InducingCov, InducingMask};
use crate::error::{Error, Result};
use crate::kernel::{kernel_column, kernel_matrix, KernelParams};
use crate::linalg::{spd_inverse, symmetrize};
use crate::vsgp::{PredictiveDist, VsgpModel};
use crate::window::SlidingWindow;

/// `[λ^{t-1}, …, λ, 1]`, oldest first.
pub fn lambda_weights(t_cur: usize, lambda: f64) -> Result<DVector<f64>> {
    validate_lambda(lambda)?;
    Ok(DVector::from_fn(t_cur, |i, _| lambda.powi((t_cur - 1 - i) as i32)))
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// Static settings of an adaptive model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub lambda: f64,
    /// Window length T.
    pub window_t: usize,
    /// Inducing-set capacity M.
    pub capacity_m: usize,
    pub jitter: f64,
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.lambda)?;
        if self.window_t == 0 || self.capacity_m == 0 {
            return Err(Error::InvalidConfig("window length and capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Full mutable state of an online adaptive model.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    pub(crate) window: SlidingWindow,
    pub inducing: DMatrix<f64>,
    pub params: KernelParams,
    pub log_noise: f64,
    pub config: AdaptiveConfig,
    pub(crate) s_y: DVector<f64>,
    pub(crate) s_k: DMatrix<f64>,
    pub(crate) b_lam: DMatrix<f64>,
    pub(crate) kuu: DMatrix<f64>,
    pub(crate) kuu_inv: DMatrix<f64>,
    pub(crate) kuu_jitter: f64,
    pub(crate) w_ksum: f64,
}

impl AdaptiveState {
    /// State over the last `window_t` samples of `(x, y)` with caches built
    /// from scratch.
    pub fn new(
        config: AdaptiveConfig,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        inducing: DMatrix<f64>,
        params: KernelParams,
        log_noise: f64,
    ) -> Result<Self> {
        config.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs but {} targets", x.nrows(), y.len())));
        }
        if inducing.nrows() == 0 {
            return Err(Error::InvalidConfig("at least one inducing point is required".into()));
        }
        if x.nrows() > 0 && x.ncols() != inducing.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} columns, inducing points {}",
                x.ncols(),
                inducing.ncols()
            )));
        }
        let k = inducing.nrows();
        let mut state = Self {
            window: SlidingWindow::from_data(x, y, config.window_t),
            inducing,
            params,
            log_noise,
            config,
            s_y: DVector::zeros(k),
            s_k: DMatrix::zeros(k, k),
            b_lam: DMatrix::zeros(k, k),
            kuu: DMatrix::zeros(k, k),
            kuu_inv: DMatrix::zeros(k, k),
            kuu_jitter: 0.0,
            w_ksum: 0.0,
        };
        state.rebuild_caches()?;
        Ok(state)
    }

    /// State with an inducing set but no data yet.
    pub fn empty(config: AdaptiveConfig, inducing: DMatrix<f64>, params: KernelParams, log_noise: f64) -> Result<Self> {
        let dim = inducing.ncols();
        Self::new(config, &DMatrix::zeros(0, dim), &DVector::zeros(0), inducing, params, log_noise)
    }

    /// Streaming state seeded from a batch model and its training data.
    pub fn from_model(
        model: &VsgpModel,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        lambda: f64,
        window_t: usize,
        capacity_m: usize,
    ) -> Result<Self> {
        let config = AdaptiveConfig { lambda, window_t, capacity_m, jitter: model.jitter };
        Self::new(config, x, y, model.inducing.clone(), model.params, model.log_noise)
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
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

    pub fn window_weights(&self) -> DVector<f64> {
        lambda_weights(self.window.len(), self.config.lambda).expect("lambda validated at construction")
    }

    /// Cached `K_ux Λ y`.
    pub fn s_y(&self) -> &DVector<f64> {
        &self.s_y
    }

    /// Cached `K_ux Λ K_xu`.
    pub fn s_k(&self) -> &DMatrix<f64> {
        &self.s_k
    }

    /// Cached `B_λ`.
    pub fn b_lam(&self) -> &DMatrix<f64> {
        &self.b_lam
    }

    /// Cached `K_uu⁻¹` (of the jittered `K_uu`).
    pub fn kuu_inv(&self) -> &DMatrix<f64> {
        &self.kuu_inv
    }

    /// Jittered `K_uu` the cached inverses refer to.
    pub fn kuu(&self) -> &DMatrix<f64> {
        &self.kuu
    }

    /// Absolute jitter on the diagonal of [`AdaptiveState::kuu`].
    pub fn kuu_jitter(&self) -> f64 {
        self.kuu_jitter
    }

    /// Cached `Σ λ^{t-t'} k_{t't'}`.
    pub fn w_ksum(&self) -> f64 {
        self.w_ksum
    }

    /// Recomputes every cache from the window, the inducing set and the
    /// current hyperparameters. O(T M² + M³).
    pub fn rebuild_caches(&mut self) -> Result<()> {
        let kuu = InducingCov::new(&self.inducing, &self.params, self.config.jitter)?;
        let k = self.inducing.nrows();
        let (s_y, s_k) = if self.window.is_empty() {
            (DVector::zeros(k), DMatrix::zeros(k, k))
        } else {
            let x = self.window.inputs();
            let y = self.window.targets();
            let w = self.window_weights();
            let p = kernel_matrix(&x, &self.inducing, &self.params)?;
            let wp = crate::bound::scale_rows(&p, &w);
            (wp.transpose() * y, symmetrize(&(p.transpose() * wp)))
        };
        let w_ksum = self.params.variance() * self.window_weights().sum();
        let (b_lam, _) = spd_inverse(&(&kuu.eff + &s_k / self.noise_var()), 0.0)?;
        self.kuu_jitter = kuu.chol.jitter_used();
        self.kuu = kuu.eff;
        self.kuu_inv = kuu.inv;
        self.s_y = s_y;
        self.s_k = s_k;
        self.b_lam = b_lam;
        self.w_ksum = w_ksum;
        Ok(())
    }

    /// `B_λ = (K_uu + σ⁻² s_k)⁻¹` from the current caches. O(M³).
    pub(crate) fn refresh_b_lam(&mut self) -> Result<()> {
        let (b, _) = spd_inverse(&symmetrize(&(&self.kuu + &self.s_k / self.noise_var())), 0.0)?;
        self.b_lam = b;
        Ok(())
    }

    /// λ-weighted collapsed bound over the window, O(T M²).
    pub fn adaptive_bound(&self) -> Result<f64> {
        let (x, y, w) = (self.window.inputs(), self.window.targets(), self.window_weights());
        Ok(weighted_bound(&x, &y, &w, &self.inducing, &self.params, self.log_noise, self.config.jitter, None)?.0)
    }

    /// Value and masked gradient of [`AdaptiveState::adaptive_bound`].
    pub fn adaptive_bound_gradients(&self, mask: &InducingMask) -> Result<(f64, BoundGradient)> {
        let (x, y, w) = (self.window.inputs(), self.window.targets(), self.window_weights());
        let (v, g) = weighted_bound(&x, &y, &w, &self.inducing, &self.params, self.log_noise, self.config.jitter, Some(mask))?;
        Ok((v, g.expect("gradient requested")))
    }

    /// Adaptive optimum `(μ_λ, A_λ) = (σ⁻² K_uu B_λ s_y, K_uu B_λ K_uu)`.
    pub fn adaptive_q(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mu = &self.kuu * (&self.b_lam * &self.s_y) / self.noise_var();
        let a = symmetrize(&(&self.kuu * &self.b_lam * &self.kuu));
        (mu, a)
    }

    /// Adaptive predictive `m = σ⁻² k_u*ᵀ B_λ s_y`,
    /// `v = k** + k_u*ᵀ (B_λ - K_uu⁻¹) k_u*`, O(M²).
    pub fn adaptive_predict(&self, xstar: &DVector<f64>) -> PredictiveDist {
        let (mean, var) = self.adaptive_predict_raw(xstar);
        PredictiveDist::new(mean, var)
    }

    /// Unclamped mean and variance.
    pub fn adaptive_predict_raw(&self, xstar: &DVector<f64>) -> (f64, f64) {
        let k = kernel_column(&self.inducing, xstar, &self.params).expect("query dimension matches model");
        let bk = &self.b_lam * &k;
        let mean = bk.dot(&self.s_y) / self.noise_var();
        let var = self.params.variance() + k.dot(&bk) - k.dot(&(&self.kuu_inv * &k));
        (mean, var)
    }

    /// λ-weighted Nyström residual of the window, clamped at zero.
    pub fn relevance_total(&self) -> f64 {
        (self.w_ksum - self.kuu_inv.component_mul(&self.s_k).sum()).max(0.0)
    }

    /// Per-inducing-point relevance `R_m = Σ λ^{t-t'} k_{m t'}² / k_mm`.
    pub fn relevance_per_point(&self) -> DVector<f64> {
        let kmm = self.params.variance();
        DVector::from_fn(self.num_inducing(), |m, _| self.s_k[(m, m)] / kmm)
    }

    /// Inducing-addition threshold `(1/T) Σ λ^{t-t'} k_{t't'}` with T the
    /// configured window length.
    pub fn threshold_tot(&self) -> f64 {
        self.w_ksum / self.config.window_t as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64) -> AdaptiveConfig {
        AdaptiveConfig { lambda, window_t: 10, capacity_m: 5, jitter: 1e-6 }
    }

    #[test]
    fn weights() {
        assert_eq!(lambda_weights(4, 1.0).unwrap(), DVector::from_element(4, 1.0));
        assert_eq!(lambda_weights(3, 0.5).unwrap(), DVector::from_vec(vec![0.25, 0.5, 1.0]));
        let w = lambda_weights(101, 0.97724).unwrap();
        assert!((w[0] / 0.1 - 1.0).abs() < 0.01);
        assert!(matches!(lambda_weights(3, 0.0), Err(Error::InvalidLambda(_))));
        assert!(matches!(lambda_weights(3, 1.5), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn far_query_recovers_prior() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.1);
        let y = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let s = AdaptiveState::new(cfg(0.9), &x, &y, x.rows(0, 3).into_owned(), KernelParams::new(1.7, 0.2), -2.0).unwrap();
        let pd = s.adaptive_predict(&DVector::from_element(1, 50.0));
        assert!(pd.mean.abs() < 1e-12);
        assert!((pd.var - 1.7).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_zero_mean() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.1);
        let s = AdaptiveState::new(cfg(0.8), &x, &DVector::zeros(6), x.rows(1, 2).into_owned(), KernelParams::new(1.0, 0.3), -1.0)
            .unwrap();
        let (mu, a) = s.adaptive_q();
        assert_eq!(mu, DVector::zeros(2));
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn single_far_datum_residual_is_bounded() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let s = AdaptiveState::new(cfg(0.9), &x, &DVector::from_element(1, 0.5), DMatrix::from_element(1, 1, 0.0), KernelParams::new(2.0, 0.8), -1.0)
            .unwrap();
        let r = s.relevance_total();
        assert!(r > 0.0 && r < 2.0);
    }

    #[test]
    fn orthogonal_inducing_point_has_zero_relevance() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64 * 0.1);
        let u = DMatrix::from_row_slice(2, 1, &[0.2, 1000.0]);
        let s = AdaptiveState::new(cfg(0.9), &x, &DVector::from_element(5, 1.0), u, KernelParams::new(1.0, 0.3), -1.0).unwrap();
        let r = s.relevance_per_point();
        assert!(r[0] > 0.0);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn threshold_examples() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let s = AdaptiveState::new(cfg(1.0), &x, &DVector::zeros(10), x.rows(0, 2).into_owned(), KernelParams::new(1.0, 1.0), 0.0).unwrap();
        assert!((s.threshold_tot() - 1.0).abs() < 1e-12);

        let c = AdaptiveConfig { lambda: 0.5, window_t: 2, capacity_m: 2, jitter: 1e-6 };
        let x2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let s2 = AdaptiveState::new(c, &x2, &DVector::zeros(2), x2.clone(), KernelParams::new(3.0, 1.0), 0.0).unwrap();
        assert!((s2.threshold_tot() - 0.75 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let u = DMatrix::from_element(1, 1, 0.0);
        let p = KernelParams::new(1.0, 1.0);
        assert!(AdaptiveState::empty(AdaptiveConfig { lambda: 0.0, ..cfg(1.0) }, u.clone(), p, 0.0).is_err());
        assert!(AdaptiveState::empty(AdaptiveConfig { window_t: 0, ..cfg(1.0) }, u, p, 0.0).is_err());
        assert!(AdaptiveState::empty(cfg(1.0), DMatrix::zeros(0, 1), p, 0.0).is_err());
    }
}
