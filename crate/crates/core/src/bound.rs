//! Weighted collapsed variational bound and its analytic gradients.
//!
//! With per-sample weights `w` (all ones for the batch model, `λ^{t-t'}` for
//! the adaptive one) the bound is
//!
//! ```text
//! F = log N(y | 0, σ² W⁻¹ + K_xu K_uu⁻¹ K_ux)
//!     - ½ Σ (w - 1) log(2πσ²)
//!     - (1 / 2σ²) Σ w (k_tt - k_utᵀ K_uu⁻¹ k_ut)
//! ```
//!
//! evaluated through the M×M matrix `A = K_uu + σ⁻² K_ux W K_xu` so the cost
//! is O(N M²). Gradients are formed w.r.t. `K_uu` and `K_xu` first and then
//! chained through the kernel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, kernel_sym, sq_dist_rows, KernelParams};
use crate::linalg::{cholesky_psd, logdet, symmetrize, CholFactor};

/// Which inducing-point rows receive gradient entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InducingMask {
    All,
    /// Only the last row (the most recently added inducing point).
    Newest,
    None,
    Rows(Vec<usize>),
}

impl InducingMask {
    pub(crate) fn rows(&self, k: usize) -> Vec<usize> {
        match self {
            InducingMask::All => (0..k).collect(),
            InducingMask::Newest => k.checked_sub(1).into_iter().collect(),
            InducingMask::None => Vec::new(),
            InducingMask::Rows(r) => r.clone(),
        }
    }
}

/// Gradient of a bound w.r.t. the free model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGradient {
    /// Inducing rows present in `inducing`, in order.
    pub inducing_rows: Vec<usize>,
    /// `inducing[(r, d)] = ∂F / ∂u_{inducing_rows[r], d}`
    pub inducing: DMatrix<f64>,
    pub log_variance: f64,
    pub log_lengthscale: f64,
    pub log_noise: f64,
}

impl BoundGradient {
    /// Flattens as (inducing row-major, log_variance, log_lengthscale, log_noise).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.inducing.len() + 3);
        for r in 0..self.inducing.nrows() {
            v.extend(self.inducing.row(r).iter());
        }
        v.extend([self.log_variance, self.log_lengthscale, self.log_noise]);
        v
    }
}

/// `K_uu` pieces shared by every bound and predictive computation.
#[derive(Debug, Clone)]
pub(crate) struct InducingCov {
    pub raw: DMatrix<f64>,
    /// `raw + jitter_used * I`
    pub eff: DMatrix<f64>,
    pub chol: CholFactor,
    pub inv: DMatrix<f64>,
}

impl InducingCov {
    pub fn new(u: &DMatrix<f64>, params: &KernelParams, jitter: f64) -> Result<Self> {
        let raw = kernel_sym(u, params);
        let chol = cholesky_psd(&raw, jitter)?;
        let mut eff = raw.clone();
        for i in 0..eff.nrows() {
            eff[(i, i)] += chol.jitter_used();
        }
        let inv = chol.inverse();
        Ok(Self { raw, eff, chol, inv })
    }
}

/// Scales row `i` of `m` by `w[i]`.
pub(crate) fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

pub(crate) fn check_data(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, u: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.len() || y.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs, {} targets, {} weights",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    if x.nrows() == 0 || u.nrows() == 0 {
        return Err(Error::DimensionMismatch("empty data or inducing set".into()));
    }
    if x.ncols() != u.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, inducing points {}",
            x.ncols(),
            u.ncols()
        )));
    }
    Ok(())
}

/// Chains `G_uu = ∂F/∂K_uu` (symmetric) and `G_P = ∂F/∂K_xu` through the
/// kernel. Returns (inducing-row gradients, ∂/∂log σ_f², ∂/∂log ℓ); the
/// log-variance part excludes any explicit `Σ w k_tt` dependence.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chain_kernel(
    g_uu: &DMatrix<f64>,
    g_p: &DMatrix<f64>,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    p: &DMatrix<f64>,
    kuu: &InducingCov,
    params: &KernelParams,
    rows: &[usize],
) -> (DMatrix<f64>, f64, f64) {
    let l2 = params.lengthscale() * params.lengthscale();
    let k = u.nrows();
    let dim = u.ncols();

    let d_logvar = g_uu.component_mul(&kuu.eff).sum() + g_p.component_mul(p).sum();

    let mut d_logl = 0.0;
    for j in 0..k {
        for i in 0..k {
            if i != j {
                d_logl += g_uu[(i, j)] * kuu.raw[(i, j)] * sq_dist_rows(u, i, u, j);
            }
        }
    }
    for m in 0..k {
        for n in 0..x.nrows() {
            d_logl += g_p[(n, m)] * p[(n, m)] * sq_dist_rows(x, n, u, m);
        }
    }
    d_logl /= l2;

    let mut d_u = DMatrix::zeros(rows.len(), dim);
    for (r, &m) in rows.iter().enumerate() {
        for d in 0..dim {
            let mut acc = 0.0;
            for n in 0..x.nrows() {
                acc += g_p[(n, m)] * p[(n, m)] * (x[(n, d)] - u[(m, d)]);
            }
            for i in 0..k {
                if i != m {
                    acc += 2.0 * g_uu[(i, m)] * kuu.raw[(i, m)] * (u[(i, d)] - u[(m, d)]);
                }
            }
            d_u[(r, d)] = acc / l2;
        }
    }
    (d_u, d_logvar, d_logl)
}

/// Value (and optionally gradient) of the weighted collapsed bound.
#[allow(clippy::too_many_arguments)]
pub(crate) fn weighted_bound(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    params: &KernelParams,
    log_noise: f64,
    jitter: f64,
    mask: Option<&InducingMask>,
) -> Result<(f64, Option<BoundGradient>)> {
    check_data(x, y, w, u)?;
    let n = x.nrows() as f64;
    let s = log_noise.exp();
    let kuu = InducingCov::new(u, params, jitter)?;
    let p = kernel_matrix(x, u, params)?;
    let wp = scale_rows(&p, w);
    let s_k = symmetrize(&(p.transpose() * &wp));
    let s_y = wp.transpose() * y;

    let a = &kuu.eff + &s_k / s;
    let a_chol = cholesky_psd(&a, 0.0)?;
    let c = a_chol.solve_vec(&s_y);

    let sum_w = w.sum();
    let sum_log_w: f64 = w.iter().map(|v| v.ln()).sum();
    let y_w_y: f64 = y.iter().zip(w.iter()).map(|(yi, wi)| wi * yi * yi).sum();
    let w_ksum = params.variance() * sum_w;
    let tr_ki_sk = kuu.inv.component_mul(&s_k).sum();

    let log_det_c = n * s.ln() - sum_log_w + logdet(&a_chol) - logdet(&kuu.chol);
    let quad = y_w_y / s - s_y.dot(&c) / (s * s);
    let value = -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det_c - 0.5 * quad
        - 0.5 * (sum_w - n) * (2.0 * PI * s).ln()
        - (w_ksum - tr_ki_sk) / (2.0 * s);

    let Some(mask) = mask else {
        return Ok((value, None));
    };

    let a_inv = a_chol.inverse();
    let ki_sk_ki = &kuu.inv * &s_k * &kuu.inv;
    let g_uu = symmetrize(&(-0.5 * &a_inv + 0.5 * &kuu.inv - (0.5 / (s * s)) * (&c * c.transpose()) - (0.5 / s) * &ki_sk_ki));

    // G_P = W [ -σ⁻² P A⁻¹ + σ⁻⁴ y cᵀ - σ⁻⁶ P c cᵀ + σ⁻² P K_uu⁻¹ ]
    let wy = y.component_mul(w);
    let wpc = &wp * &c;
    let g_p = (&wp * (&kuu.inv - &a_inv)) / s + (&wy * c.transpose()) / (s * s) - (&wpc * c.transpose()) / (s * s * s);

    let rows = mask.rows(u.nrows());
    let (d_u, d_logvar, d_logl) = chain_kernel(&g_uu, &g_p, x, u, &p, &kuu, params, &rows);

    let tr_ai_sk = a_inv.component_mul(&s_k).sum();
    let d_s = -0.5 * sum_w / s + 0.5 * tr_ai_sk / (s * s) + 0.5 * y_w_y / (s * s) - s_y.dot(&c) / (s * s * s)
        + 0.5 * c.dot(&(&s_k * &c)) / (s * s * s * s)
        + (w_ksum - tr_ki_sk) / (2.0 * s * s);

    let grad = BoundGradient {
        inducing_rows: rows,
        inducing: d_u,
        log_variance: d_logvar - w_ksum / (2.0 * s),
        log_lengthscale: d_logl,
        log_noise: s * d_s,
    };
    Ok((value, Some(grad)))
}
