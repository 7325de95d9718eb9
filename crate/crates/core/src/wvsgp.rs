//! Sliding-window batch baseline (w-VSGP): the batch model retrained on the
//! last T samples, with no forgetting inside the window, warm-started from the
//! previous step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::{OptimizerState, KEY_INDUCING};
use crate::vsgp::{adam_ascent, bound_gradients_with_jitter, collapsed_bound_with_jitter, PredictiveDist, VsgpModel};
use crate::window::SlidingWindow;

/// Batch model plus the window it is trained on.
#[derive(Debug, Clone)]
pub struct WvsgpState {
    pub model: VsgpModel,
    pub(crate) window: SlidingWindow,
}

/// What one w-VSGP step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WvsgpStep {
    pub pred: PredictiveDist,
    /// Bound on the new window before and after the inner iterations
    /// (`None` when no iterations ran).
    pub bound_before: Option<f64>,
    pub bound_after: Option<f64>,
}

impl WvsgpState {
    /// Window over the last `window_t` samples of `(x, y)`.
    pub fn new(model: VsgpModel, x: &DMatrix<f64>, y: &DVector<f64>, window_t: usize) -> Result<Self> {
        if window_t == 0 {
            return Err(Error::InvalidConfig("window length must be positive".into()));
        }
        Ok(Self { model, window: SlidingWindow::from_data(x, y, window_t) })
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
}

/// One w-VSGP update: predict, slide the window, run `inner_iters` Adam steps
/// on the collapsed bound over every parameter and refit the optimal `q`.
/// A factorization failure ends the inner loop at the last good parameters.
pub fn wvsgp_step(
    state: &mut WvsgpState,
    opt: &mut OptimizerState,
    x_new: &DVector<f64>,
    y_new: f64,
    inner_iters: usize,
) -> Result<WvsgpStep> {
    let pred = state.model.predict(x_new);
    state.window.push(x_new.clone(), y_new);
    let x = state.window.inputs();
    let y = state.window.targets();
    let jitter = state.model.jitter;
    let mut u = state.model.inducing.clone();
    let mut params = state.model.params;
    let mut log_noise = state.model.log_noise;

    let mut bound_before = None;
    for it in 0..inner_iters {
        let (value, g) = match bound_gradients_with_jitter(&x, &y, &u, &params, log_noise, jitter) {
            Ok(r) => r,
            Err(e @ (Error::NotPsd { .. } | Error::NotSymmetric { .. })) => {
                log::warn!("w-VSGP inner loop stopped at iteration {it}: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        bound_before.get_or_insert(value);
        let saved = (u.clone(), params, log_noise);
        adam_ascent(opt, KEY_INDUCING, &mut u, &mut params, &mut log_noise, &g);
        if !params.is_finite() || !log_noise.is_finite() || u.iter().any(|v| !v.is_finite()) {
            (u, params, log_noise) = saved;
            break;
        }
    }
    let bound_after = match bound_before {
        Some(_) => collapsed_bound_with_jitter(&x, &y, &u, &params, log_noise, jitter).ok(),
        None => None,
    };
    match VsgpModel::from_data(&x, &y, u, params, log_noise, jitter) {
        Ok(m) => state.model = m,
        Err(e) => {
            log::warn!("w-VSGP update rejected: {e}");
            let m = &state.model;
            state.model = VsgpModel::from_data(&x, &y, m.inducing.clone(), m.params, m.log_noise, jitter)?;
        }
    }
    Ok(WvsgpStep { pred, bound_before, bound_after })
}
