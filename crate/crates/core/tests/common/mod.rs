//! Independent dense oracles for the sparse-GP quantities. Everything here is
//! assembled literally from N×N or M×M matrices with generic inverses; none of
//! it goes through the library's Woodbury forms or caches.
#![allow(dead_code)]

use std::f64::consts::PI;

use adaptive_sgp::kernel::KernelParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn se(a: &[f64], b: &[f64], var: f64, ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum();
    var * (-0.5 * d2 / (ell * ell)).exp()
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub fn dense_kernel(x: &DMatrix<f64>, z: &DMatrix<f64>, var: f64, ell: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| se(&row(x, i), &row(z, j), var, ell))
}

pub fn inv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("invertible")
}

pub fn log_det(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant().abs().ln()
}

/// `log N(y | 0, C)` through a generic inverse and LU determinant.
pub fn gauss_logpdf(y: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det(c) - 0.5 * y.dot(&(inv(c) * y))
}

/// Weighted collapsed bound assembled from the N×N covariance
/// `σ² W⁻¹ + K_xu K_uu⁻¹ K_ux`.
pub fn dense_bound(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    p: &KernelParams,
    log_noise: f64,
) -> f64 {
    let (var, ell, s) = (p.variance(), p.lengthscale(), log_noise.exp());
    let kxu = dense_kernel(x, u, var, ell);
    let q = &kxu * inv(&dense_kernel(u, u, var, ell)) * kxu.transpose();
    let mut c = q.clone();
    for i in 0..y.len() {
        c[(i, i)] += s / w[i];
    }
    let mut out = gauss_logpdf(y, &c);
    for i in 0..y.len() {
        out -= 0.5 * (w[i] - 1.0) * (2.0 * PI * s).ln();
        out -= w[i] * (var - q[(i, i)]) / (2.0 * s);
    }
    out
}

pub fn exact_lml(x: &DMatrix<f64>, y: &DVector<f64>, p: &KernelParams, log_noise: f64) -> f64 {
    let mut c = dense_kernel(x, x, p.variance(), p.lengthscale());
    for i in 0..y.len() {
        c[(i, i)] += log_noise.exp();
    }
    gauss_logpdf(y, &c)
}

/// `(σ⁻² K_uu B K_ux W y, K_uu B K_uu)` with `B = (K_uu + σ⁻² K_ux W K_xu)⁻¹`.
pub fn dense_q(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    p: &KernelParams,
    log_noise: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = log_noise.exp();
    let kuu = dense_kernel(u, u, p.variance(), p.lengthscale());
    let kux = dense_kernel(u, x, p.variance(), p.lengthscale());
    let wd = DMatrix::from_diagonal(w);
    let b = inv(&(&kuu + &kux * &wd * kux.transpose() / s));
    let mu = &kuu * &b * &kux * &wd * y / s;
    let a = &kuu * &b * &kuu;
    (mu, a)
}

/// Predictive mean and variance from `(μ, A)`, with explicit inverses.
pub fn dense_predict(
    u: &DMatrix<f64>,
    p: &KernelParams,
    mu: &DVector<f64>,
    a: &DMatrix<f64>,
    xstar: &DVector<f64>,
) -> (f64, f64) {
    let (var, ell) = (p.variance(), p.lengthscale());
    let ki = inv(&dense_kernel(u, u, var, ell));
    let k = DVector::from_fn(u.nrows(), |m, _| se(&row(u, m), xstar.as_slice(), var, ell));
    let mean = (k.transpose() * &ki * mu)[0];
    let v = var - (k.transpose() * &ki * &k)[0] + (k.transpose() * &ki * a * &ki * &k)[0];
    (mean, v)
}

/// λ-weighted ELBO with the Gaussian expectation written per sample.
#[allow(clippy::too_many_arguments)]
pub fn dense_elbo(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    u: &DMatrix<f64>,
    p: &KernelParams,
    log_noise: f64,
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> f64 {
    let (var, ell, s) = (p.variance(), p.lengthscale(), log_noise.exp());
    let kuu = dense_kernel(u, u, var, ell);
    let ki = inv(&kuu);
    let mut e = 0.0;
    for t in 0..y.len() {
        let k = DVector::from_fn(u.nrows(), |m, _| se(&row(u, m), &row(x, t), var, ell));
        let a = &ki * &k;
        let resid = y[t] - a.dot(mu);
        let lik = -0.5 * (2.0 * PI * s).ln() - (resid * resid + a.dot(&(cov * &a))) / (2.0 * s);
        e += w[t] * (lik - (var - k.dot(&a)) / (2.0 * s));
    }
    let m = u.nrows() as f64;
    let kl = 0.5 * ((&ki * cov).trace() + mu.dot(&(&ki * mu)) - m + log_det(&kuu) - log_det(cov));
    e - kl
}

pub fn weights(n: usize, lambda: f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| lambda.powi((n - 1 - i) as i32))
}

/// Whether every eigenvalue of `K_uu / σ_f²` exceeds `floor` (Cholesky of
/// the shifted matrix succeeds).
pub fn kuu_eig_above(u: &DMatrix<f64>, p: &KernelParams, floor: f64) -> bool {
    let k = dense_kernel(u, u, 1.0, p.lengthscale());
    let m = k.nrows();
    (k - DMatrix::identity(m, m) * floor).cholesky().is_some()
}

/// A random regression problem with a well-conditioned inducing set.
pub struct Instance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub u: DMatrix<f64>,
    pub params: KernelParams,
    pub log_noise: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> Instance {
    let var = rng.random_range(0.5..2.0);
    let mut ell = rng.random_range(0.5..1.5);
    let x: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |i, _| (1.3 * x[(i, 0)]).sin() + rng.random_range(-0.3..0.3));
    // many points in few dimensions crowd together; shorten ℓ until some draw
    // is well conditioned
    let (u, params) = 'found: loop {
        let params = KernelParams::new(var, ell);
        for _ in 0..50 {
            let u = DMatrix::from_fn(m, d, |_, _| rng.random_range(-2.0..2.0));
            if kuu_eig_above(&u, &params, 1e-3) {
                break 'found (u, params);
            }
        }
        ell *= 0.8;
    };
    let log_noise = rng.random_range(0.01f64..0.5).ln();
    Instance { x, y, u, params, log_noise }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Relative Frobenius error of `a` against `b`.
pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Central difference of `f` at `theta` along coordinate `i`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: &F, theta: &[f64], i: usize) -> f64 {
    let h = 1e-5 * theta[i].abs().max(1.0);
    let mut up = theta.to_vec();
    let mut dn = theta.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// Agreement of an analytic gradient with central differences: relative
/// error 1e-4, plus an absolute floor of 1e-7 times the largest gradient entry
/// (differencing noise on near-zero coordinates).
pub fn grad_matches(analytic: f64, numeric: f64, scale: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-7 * scale.max(1.0)
}

/// Packs (U row-major, log σ_f², log ℓ, log σ²).
pub fn pack(u: &DMatrix<f64>, p: &KernelParams, log_noise: f64) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for r in 0..u.nrows() {
        v.extend(u.row(r).iter());
    }
    v.extend([p.log_variance, p.log_lengthscale, log_noise]);
    v
}

pub fn unpack(v: &[f64], m: usize, d: usize) -> (DMatrix<f64>, KernelParams, f64) {
    let u = DMatrix::from_fn(m, d, |i, j| v[i * d + j]);
    let k = m * d;
    (u, KernelParams { log_variance: v[k], log_lengthscale: v[k + 1] }, v[k + 2])
}
