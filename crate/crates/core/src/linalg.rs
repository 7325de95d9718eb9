//! Dense symmetric positive-definite linear algebra.
//!
//! Factorizations go through nalgebra's Cholesky; this module adds the jitter
//! ladder, the symmetry precondition and the bordered-inverse extension used
//! to grow cached inverses by one row and column.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Default jitter, relative to the mean diagonal of the factored matrix.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Number of ×10 escalations attempted after the base jitter fails.
pub const MAX_JITTER_ESCALATIONS: u32 = 6;

/// Relative symmetry tolerance accepted by [`cholesky_psd`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Default Schur-complement floor of [`inv_extend`], relative to `|b0|`.
pub const SCHUR_REL_TOL: f64 = 1e-10;

// Starting point of the ladder when the caller asks for zero base jitter.
const ZERO_BASE_LADDER_START: f64 = 1e-10;

/// Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    jitter_used: f64,
}

impl CholFactor {
    /// The lower-triangular factor `L` with `L Lᵀ = A + jitter_used * I`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Inverse of the jittered matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Largest absolute entry of `A - Aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Factors `A + jitter * I`, escalating the jitter ×10 (at most
/// [`MAX_JITTER_ESCALATIONS`] times) until the factorization succeeds.
///
/// `base_jitter` is relative to the mean diagonal of `A`; a zero base first
/// tries the unjittered matrix and then escalates from 1e-10 of the mean
/// diagonal.
pub fn cholesky_psd(a: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let scale_abs = a.amax().max(f64::MIN_POSITIVE);
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL * scale_abs {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mean_diag = if n == 0 { 1.0 } else { a.diagonal().sum() / n as f64 };
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 { mean_diag } else { 1.0 };

    let mut jitter = base_jitter.max(0.0) * scale;
    let mut last = jitter;
    for step in 0..=MAX_JITTER_ESCALATIONS {
        if step > 0 {
            jitter = if base_jitter > 0.0 {
                jitter * 10.0
            } else if step == 1 {
                ZERO_BASE_LADDER_START * scale
            } else {
                jitter * 10.0
            };
        }
        last = jitter;
        let mut m = symmetrize(a);
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let diag_ok = chol.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite());
            if diag_ok {
                return Ok(CholFactor { chol, jitter_used: jitter });
            }
        }
    }
    Err(Error::NotPsd { jitter: last })
}

/// Solves `(A + jitter I) X = B` through the stored factor.
pub fn solve_psd(f: &CholFactor, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f.dim() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "factor is {0}x{0} but right-hand side has {1} rows",
            f.dim(),
            b.nrows()
        )));
    }
    Ok(f.chol.solve(b))
}

/// `log det(A + jitter I)`.
pub fn logdet(f: &CholFactor) -> f64 {
    2.0 * f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Factors and inverts an SPD matrix in one go.
pub fn spd_inverse(a: &DMatrix<f64>, base_jitter: f64) -> Result<(DMatrix<f64>, CholFactor)> {
    let f = cholesky_psd(a, base_jitter)?;
    Ok((f.inverse(), f))
}

/// Inverse of the bordered matrix `[[A, b], [bᵀ, b0]]` given `A⁻¹`, in O(k²).
///
/// Fails with [`Error::SchurNotPositive`] when `b0 - bᵀ A⁻¹ b` is at or below
/// `SCHUR_REL_TOL * |b0|`.
pub fn inv_extend(a_inv: &DMatrix<f64>, b: &DVector<f64>, b0: f64) -> Result<DMatrix<f64>> {
    inv_extend_with_tol(a_inv, b, b0, SCHUR_REL_TOL * b0.abs())
}

/// [`inv_extend`] with an explicit absolute Schur-complement floor.
pub fn inv_extend_with_tol(
    a_inv: &DMatrix<f64>,
    b: &DVector<f64>,
    b0: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let k = a_inv.nrows();
    if a_inv.ncols() != k || b.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "inverse is {}x{} but border has length {}",
            a_inv.nrows(),
            a_inv.ncols(),
            b.len()
        )));
    }
    let c = a_inv * b;
    let schur = b0 - b.dot(&c);
    if !(schur > tol) {
        return Err(Error::SchurNotPositive { schur, tol });
    }
    let inv_s = 1.0 / schur;
    let mut out = DMatrix::zeros(k + 1, k + 1);
    for j in 0..k {
        for i in 0..k {
            out[(i, j)] = a_inv[(i, j)] + c[i] * c[j] * inv_s;
        }
        out[(k, j)] = -c[j] * inv_s;
        out[(j, k)] = -c[j] * inv_s;
    }
    out[(k, k)] = inv_s;
    Ok(out)
}

/// Removes the listed rows and columns (indices into `a`) from a square matrix.
pub(crate) fn select_square(a: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| a[(keep[i], keep[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_factor_has_no_jitter() {
        let f = cholesky_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(f.jitter_used(), 0.0);
        assert_eq!(f.lower(), DMatrix::identity(3, 3));
        assert_eq!(logdet(&f), 0.0);
    }

    #[test]
    fn hand_factor_of_2x2() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky_psd(&a, 0.0).unwrap();
        let l = f.lower();
        assert!(close(l[(0, 0)], 2.0, 1e-14));
        assert!(close(l[(1, 0)], 1.0, 1e-14));
        assert!(close(l[(1, 1)], 2f64.sqrt(), 1e-14));
        assert_eq!(l[(0, 1)], 0.0);
        assert!(close(logdet(&f), 8f64.ln(), 1e-14));

        let x = solve_psd(&f, &DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(close(x[(0, 0)], 3.0 / 8.0, 1e-14));
        assert!(close(x[(1, 0)], -0.25, 1e-14));
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = cholesky_psd(&a, 1e-6).unwrap();
        assert!(f.jitter_used() >= 1e-6);
    }

    #[test]
    fn zero_base_escalates_on_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = cholesky_psd(&a, 0.0).unwrap();
        assert!(f.jitter_used() > 0.0);
    }

    #[test]
    fn negative_definite_is_rejected() {
        let a = -DMatrix::<f64>::identity(3, 3);
        assert!(matches!(cholesky_psd(&a, 1e-6), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn asymmetric_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(cholesky_psd(&a, 0.0), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn scalar_matrix_logdet() {
        let f = cholesky_psd(&(DMatrix::identity(4, 4) * 3.0), 0.0).unwrap();
        assert!(close(logdet(&f), 4.0 * 3f64.ln(), 1e-13));
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let f = cholesky_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 3.5, 0.25, 7.0, 1e-3]);
        assert_eq!(solve_psd(&f, &b).unwrap(), b);
        assert!(matches!(
            solve_psd(&f, &DMatrix::zeros(2, 1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn extend_block_diagonal() {
        let out = inv_extend(&DMatrix::identity(1, 1), &DVector::from_element(1, 0.0), 1.0).unwrap();
        assert_eq!(out, DMatrix::identity(2, 2));
    }

    #[test]
    fn extend_hand_2x2() {
        let out = inv_extend(
            &DMatrix::from_element(1, 1, 0.25),
            &DVector::from_element(1, 2.0),
            3.0,
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, -2.0, -2.0, 4.0]) / 8.0;
        assert!((out - expected).amax() < 1e-15);
    }

    #[test]
    fn extend_rejects_singular_border() {
        // [[1, 1], [1, 1]] is singular: Schur complement exactly zero
        let err = inv_extend(&DMatrix::identity(1, 1), &DVector::from_element(1, 1.0), 1.0);
        assert!(matches!(err, Err(Error::SchurNotPositive { .. })));
    }

    #[test]
    fn factorization_is_deterministic() {
        let a = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let f1 = cholesky_psd(&a, 1e-6).unwrap();
        let f2 = cholesky_psd(&a, 1e-6).unwrap();
        assert_eq!(f1.lower(), f2.lower());
        assert_eq!(f1.jitter_used(), f2.jitter_used());
    }
}
