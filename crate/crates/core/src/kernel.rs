//! Squared-exponential kernel `k(x, z) = σ_f² exp(-‖x - z‖² / (2ℓ²))` with a
//! single isotropic lengthscale, parametrized in log space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Log-space hyperparameters of the squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// `log σ_f²`
    pub log_variance: f64,
    /// `log ℓ`
    pub log_lengthscale: f64,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscale: f64) -> Self {
        Self { log_variance: variance.ln(), log_lengthscale: lengthscale.ln() }
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.log_variance.is_finite() && self.log_lengthscale.is_finite()
    }

    /// Kernel value for a precomputed squared distance.
    #[inline]
    pub fn eval_sq(&self, sq_dist: f64) -> f64 {
        let l = self.lengthscale();
        self.variance() * (-0.5 * sq_dist / (l * l)).exp()
    }
}

/// Partial derivatives of every entry of `kernel_matrix(X, Z, p)`.
#[derive(Debug, Clone)]
pub struct KernelGrads {
    pub d_log_variance: DMatrix<f64>,
    pub d_log_lengthscale: DMatrix<f64>,
    /// `d_z[d][(i, j)] = ∂k(xᵢ, zⱼ) / ∂z_{j,d}`
    pub d_z: Vec<DMatrix<f64>>,
}

#[inline]
pub(crate) fn sq_dist_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..a.ncols() {
        let diff = a[(i, d)] - b[(j, d)];
        s += diff * diff;
    }
    s
}

fn check_cols(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns but inducing/second set has {}",
            x.ncols(),
            z.ncols()
        )));
    }
    Ok(())
}

/// Cross-covariance matrix `K(X, Z)`; symmetric when `X = Z`.
pub fn kernel_matrix(x: &DMatrix<f64>, z: &DMatrix<f64>, p: &KernelParams) -> Result<DMatrix<f64>> {
    check_cols(x, z)?;
    let var = p.variance();
    let inv_2l2 = 0.5 / (p.lengthscale() * p.lengthscale());
    Ok(DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
        var * (-sq_dist_rows(x, i, z, j) * inv_2l2).exp()
    }))
}

/// Symmetric `K(X, X)`, computed on one triangle and mirrored.
pub(crate) fn kernel_sym(x: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let n = x.nrows();
    let var = p.variance();
    let inv_2l2 = 0.5 / (p.lengthscale() * p.lengthscale());
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = var;
        for i in (j + 1)..n {
            let v = var * (-sq_dist_rows(x, i, x, j) * inv_2l2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `k(z_j, x)` for every row of `Z`.
pub fn kernel_column(z: &DMatrix<f64>, x: &DVector<f64>, p: &KernelParams) -> Result<DVector<f64>> {
    if z.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates but set has {} columns",
            x.len(),
            z.ncols()
        )));
    }
    let var = p.variance();
    let inv_2l2 = 0.5 / (p.lengthscale() * p.lengthscale());
    Ok(DVector::from_fn(z.nrows(), |j, _| {
        let mut s = 0.0;
        for d in 0..x.len() {
            let diff = z[(j, d)] - x[d];
            s += diff * diff;
        }
        var * (-s * inv_2l2).exp()
    }))
}

/// Diagonal of `K(X, X)`: a constant `σ_f²` vector.
pub fn kernel_diag(x: &DMatrix<f64>, p: &KernelParams) -> DVector<f64> {
    DVector::from_element(x.nrows(), p.variance())
}

/// Analytic gradients of `K(X, Z)` w.r.t. both log-hyperparameters and
/// every coordinate of every row of `Z`.
pub fn kernel_grads(x: &DMatrix<f64>, z: &DMatrix<f64>, p: &KernelParams) -> Result<KernelGrads> {
    check_cols(x, z)?;
    let k = kernel_matrix(x, z, p)?;
    let l2 = p.lengthscale() * p.lengthscale();
    let d_log_lengthscale =
        DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| k[(i, j)] * sq_dist_rows(x, i, z, j) / l2);
    let d_z = (0..x.ncols())
        .map(|d| DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| k[(i, j)] * (x[(i, d)] - z[(j, d)]) / l2))
        .collect();
    Ok(KernelGrads { d_log_variance: k, d_log_lengthscale, d_z })
}
