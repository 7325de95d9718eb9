//! Inference-free streaming updates (fast-AGP): rank-one data addition,
//! windowed removal, relevance-gated inducing-point addition through block
//! extension of the cached inverses, and pruning.

use nalgebra::DVector;

use crate::adaptive::AdaptiveState;
use crate::error::{Error, Result};
use crate::kernel::{kernel_column, kernel_matrix};
use crate::linalg::{inv_extend_with_tol, select_square, SCHUR_REL_TOL};
use crate::vsgp::PredictiveDist;

/// Relevance thresholds for inducing-set maintenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Pruning threshold relative to the largest `R_m`.
    pub r_th: f64,
    /// Absolute addition threshold on `R_tot`; `None` uses
    /// [`AdaptiveState::threshold_tot`].
    pub r_tot: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { r_th: 1e-4, r_tot: None }
    }
}

/// What one fast-AGP step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastStep {
    pub pred: PredictiveDist,
    pub added: bool,
    pub removed: usize,
}

// Schur floor for bordered extensions: a multiple of the K_uu jitter, so a
// point that duplicates an existing inducing input goes to the rebuild path.
const SCHUR_JITTER_MULTIPLE: f64 = 10.0;
// A bordered inverse amplifies the error already in the old inverse by about
// b0 / schur, so near-duplicates (not just exact ones) are rebuilt instead.
const SCHUR_MIN_RATIO: f64 = 1e-4;

impl AdaptiveState {
    /// Adds a sample without forgetting any: every cached moment is scaled by
    /// λ and the new sample enters with weight 1. Requires a window that is
    /// not yet full.
    pub fn rank1_add(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        if self.window.is_full() {
            return Err(Error::InvalidConfig("rank1_add on a full window; use windowed_add".into()));
        }
        self.rank1_moments(x_new, y_new)?;
        self.refresh_b_lam()
    }

    fn rank1_moments(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        let lambda = self.config.lambda;
        let k_u = kernel_column(&self.inducing, x_new, &self.params)?;
        self.s_y = &self.s_y * lambda + &k_u * y_new;
        self.s_k = &self.s_k * lambda + &k_u * k_u.transpose();
        self.w_ksum = lambda * self.w_ksum + self.params.variance();
        self.window.push_unbounded(x_new.clone(), y_new);
        Ok(())
    }

    /// Adds a sample to a full window and removes the oldest one, whose
    /// weight after the λ scaling is `λ^T`.
    pub fn windowed_add(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        if self.window.len() != self.config.window_t {
            return Err(Error::InvalidConfig(format!(
                "windowed_add needs a full window ({} of {})",
                self.window.len(),
                self.config.window_t
            )));
        }
        self.windowed_moments(x_new, y_new)?;
        self.refresh_b_lam()
    }

    fn windowed_moments(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        let lambda = self.config.lambda;
        let w_old = lambda.powi(self.config.window_t as i32);
        let k_u = kernel_column(&self.inducing, x_new, &self.params)?;
        let (x_old, y_old) = self.window.pop_oldest().expect("full window");
        let k_old = kernel_column(&self.inducing, &x_old, &self.params)?;
        self.s_y = &self.s_y * lambda + &k_u * y_new - &k_old * (w_old * y_old);
        self.s_k = &self.s_k * lambda + &k_u * k_u.transpose() - &k_old * k_old.transpose() * w_old;
        self.w_ksum = lambda * self.w_ksum + self.params.variance() * (1.0 - w_old);
        self.window.push_unbounded(x_new.clone(), y_new);
        Ok(())
    }

    /// [`AdaptiveState::rank1_add`] while warming up, [`AdaptiveState::windowed_add`] after.
    pub fn push_sample(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        self.push_moments(x_new, y_new)?;
        self.refresh_b_lam()
    }

    /// The window and moment half of [`AdaptiveState::push_sample`]; leaves
    /// `B_λ` stale for a caller that rebuilds anyway.
    pub(crate) fn push_moments(&mut self, x_new: &DVector<f64>, y_new: f64) -> Result<()> {
        if self.window.is_full() {
            self.windowed_moments(x_new, y_new)
        } else {
            self.rank1_moments(x_new, y_new)
        }
    }

    /// Adds `x_new` as an inducing point when `R_tot` exceeds the threshold
    /// (`None` means [`AdaptiveState::threshold_tot`]).
    pub fn maybe_add_inducing(&mut self, x_new: &DVector<f64>, r_tot_threshold: Option<f64>) -> Result<bool> {
        let threshold = r_tot_threshold.unwrap_or_else(|| self.threshold_tot());
        if self.relevance_total() > threshold {
            self.add_inducing(x_new)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Appends `u_new` to the inducing set, growing `K_uu⁻¹` and `B_λ` by
    /// block extension in O(T M + M²). Falls back to a from-scratch rebuild
    /// when either Schur complement is not safely positive.
    pub fn add_inducing(&mut self, u_new: &DVector<f64>) -> Result<()> {
        if u_new.len() != self.inducing.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inducing point has {} coordinates, set has {}",
                u_new.len(),
                self.inducing.ncols()
            )));
        }
        let k = self.num_inducing();
        let s = self.noise_var();
        let k_new = kernel_column(&self.inducing, u_new, &self.params)?;
        let k_self = self.params.variance() + self.kuu_jitter;
        let tol = if self.kuu_jitter > 0.0 { SCHUR_JITTER_MULTIPLE * self.kuu_jitter } else { SCHUR_REL_TOL * k_self };

        // moments of the new column over the window
        let (col_sk, nn_sk, new_sy) = if self.window.is_empty() {
            (DVector::zeros(k), 0.0, 0.0)
        } else {
            let x = self.window.inputs();
            let y = self.window.targets();
            let w = self.window_weights();
            let k_xn = kernel_column(&x, u_new, &self.params)?;
            let wk = k_xn.component_mul(&w);
            let k_ux = kernel_matrix(&self.inducing, &x, &self.params)?;
            (k_ux * &wk, k_xn.dot(&wk), wk.dot(&y))
        };

        let extended = inv_extend_with_tol(&self.kuu_inv, &k_new, k_self, tol.max(SCHUR_MIN_RATIO * k_self))
            .and_then(|kuu_inv| {
                let b = &k_new + &col_sk / s;
                let b0 = k_self + nn_sk / s;
                inv_extend_with_tol(&self.b_lam, &b, b0, tol.max(SCHUR_MIN_RATIO * b0)).map(|b_lam| (kuu_inv, b_lam))
            });

        self.inducing = self.inducing.clone().insert_row(k, 0.0);
        self.inducing.row_mut(k).copy_from(&u_new.transpose());

        match extended {
            Ok((kuu_inv, b_lam)) => {
                let mut kuu = self.kuu.clone().insert_row(k, 0.0).insert_column(k, 0.0);
                let mut s_k = self.s_k.clone().insert_row(k, 0.0).insert_column(k, 0.0);
                for i in 0..k {
                    kuu[(i, k)] = k_new[i];
                    kuu[(k, i)] = k_new[i];
                    s_k[(i, k)] = col_sk[i];
                    s_k[(k, i)] = col_sk[i];
                }
                kuu[(k, k)] = k_self;
                s_k[(k, k)] = nn_sk;
                self.kuu = kuu;
                self.s_k = s_k;
                self.s_y = self.s_y.clone().insert_row(k, new_sy);
                self.kuu_inv = kuu_inv;
                self.b_lam = b_lam;
                Ok(())
            }
            Err(Error::SchurNotPositive { schur, tol }) => {
                log::warn!("inducing extension fell back to a full rebuild (Schur {schur:e} <= {tol:e})");
                self.rebuild_caches()
            }
            Err(e) => Err(e),
        }
    }

    /// Drops inducing points with `R_m < r_th · max_m R_m`, then the lowest
    /// `R_m` until at most `max_k` remain (never fewer than one), and rebuilds
    /// the caches from scratch if anything was removed. Returns the removed
    /// indices.
    pub fn prune_inducing(&mut self, r_th: f64, max_k: usize) -> Result<Vec<usize>> {
        let removed = self.drop_inducing(r_th, max_k);
        if !removed.is_empty() {
            self.rebuild_caches()?;
        }
        Ok(removed)
    }

    /// Selection half of [`AdaptiveState::prune_inducing`]: shrinks the
    /// inducing set and its data moments but leaves the inverses stale.
    pub(crate) fn drop_inducing(&mut self, r_th: f64, max_k: usize) -> Vec<usize> {
        let rel = self.relevance_per_point();
        let k = rel.len();
        let max_k = max_k.max(1);
        let cutoff = r_th * rel.max();
        let mut keep: Vec<usize> = (0..k).filter(|&m| !(rel[m] < cutoff)).collect();
        if keep.is_empty() {
            keep.push(rel.imax());
        }
        if keep.len() > max_k {
            keep.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));
            keep.truncate(max_k);
            keep.sort_unstable();
        }
        if keep.len() == k {
            return Vec::new();
        }
        let removed: Vec<usize> = (0..k).filter(|m| !keep.contains(m)).collect();
        self.inducing = self.inducing.select_rows(keep.iter());
        self.s_y = self.s_y.select_rows(keep.iter());
        self.s_k = select_square(&self.s_k, &keep);
        removed
    }
}

/// One fast-AGP update: predict `x_new` before seeing `y_new`, ingest the
/// sample, gate an inducing-point addition on `R_tot`, then prune to the
/// capacity. Kernel and noise parameters are left untouched.
pub fn fast_agp_step(
    state: &mut AdaptiveState,
    x_new: &DVector<f64>,
    y_new: f64,
    thresholds: &Thresholds,
) -> Result<FastStep> {
    let pred = state.adaptive_predict(x_new);
    state.push_sample(x_new, y_new)?;
    let added = state.maybe_add_inducing(x_new, thresholds.r_tot)?;
    let removed = state.prune_inducing(thresholds.r_th, state.config.capacity_m)?.len();
    Ok(FastStep { pred, added, removed })
}
