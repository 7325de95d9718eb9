//! Full adaptive model (AGP): one optimizer iteration per sample over the
//! noise, the kernel hyperparameters and the newest inducing point.

use nalgebra::DVector;

use crate::adaptive::AdaptiveState;
use crate::bound::InducingMask;
use crate::error::{Error, Result};
use crate::optim::{OptimizerState, KEY_NEWEST_INDUCING};
use crate::vsgp::{adam_ascent, PredictiveDist};

/// What one AGP step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgpStep {
    pub pred: PredictiveDist,
    pub removed: usize,
    /// The optimizer update was rejected and the previous parameters kept.
    pub optimizer_skipped: bool,
}

/// One AGP update: predict, slide the window, prune to `M − 1`, adopt
/// `x_new` as an inducing point, take a single Adam step on the adaptive
/// bound and rebuild every cache from scratch.
///
/// A factorization failure during the optimizer step keeps the previous
/// parameters; the stream never aborts on it.
pub fn agp_step(
    state: &mut AdaptiveState,
    opt: &mut OptimizerState,
    x_new: &DVector<f64>,
    y_new: f64,
    r_th: f64,
) -> Result<AgpStep> {
    let capacity = state.config.capacity_m;
    if capacity < 2 {
        return Err(Error::InvalidConfig("AGP needs an inducing capacity of at least 2".into()));
    }
    let pred = state.adaptive_predict(x_new);
    // the inverses are rebuilt from scratch below, so the window slide, prune
    // and add only touch the window, the inducing set and the data moments
    state.push_moments(x_new, y_new)?;
    let removed = state.drop_inducing(r_th, capacity - 1).len();
    let k = state.inducing.nrows();
    state.inducing = state.inducing.clone().insert_row(k, 0.0);
    state.inducing.row_mut(k).copy_from(&x_new.transpose());

    let saved = (state.inducing.clone(), state.params, state.log_noise);
    // the newest inducing point is a fresh parameter every step
    opt.reset(KEY_NEWEST_INDUCING);
    let stepped = state.adaptive_bound_gradients(&InducingMask::Newest).and_then(|(_, g)| {
        let (mut u, mut params, mut log_noise) = saved.clone();
        adam_ascent(opt, KEY_NEWEST_INDUCING, &mut u, &mut params, &mut log_noise, &g);
        if !params.is_finite() || !log_noise.is_finite() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPsd { jitter: f64::NAN });
        }
        state.inducing = u;
        state.params = params;
        state.log_noise = log_noise;
        state.rebuild_caches()
    });
    let optimizer_skipped = match stepped {
        Ok(()) => false,
        Err(e @ (Error::NotPsd { .. } | Error::NotSymmetric { .. })) => {
            log::warn!("AGP optimizer step skipped: {e}");
            (state.inducing, state.params, state.log_noise) = saved;
            state.rebuild_caches()?;
            true
        }
        Err(e) => return Err(e),
    };
    Ok(AgpStep { pred, removed, optimizer_skipped })
}
