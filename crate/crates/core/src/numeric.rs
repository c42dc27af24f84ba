//! Dense small-matrix numerics and log-space probability helpers.
//!
//! Every covariance that leaves this module has been passed through
//! [`symmetrize_psd`], so callers can rely on exact symmetry and on the
//! smallest eigenvalue being no lower than `-tol * max(trace, 1)`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BoneError, Result};

/// Default PSD repair tolerance, relative to `max(trace, 1)`.
pub const DEFAULT_PSD_TOL: f64 = 1e-9;

static PSD_TOL_BITS: AtomicU64 = AtomicU64::new(0x3E11_2E0B_E826_D695); // 1e-9

/// Current PSD tolerance used by every repair in the crate.
pub fn psd_tolerance() -> f64 {
    f64::from_bits(PSD_TOL_BITS.load(Ordering::Relaxed))
}

/// Overrides the process-wide PSD tolerance. Non-positive or non-finite values are ignored.
pub fn set_psd_tolerance(tol: f64) {
    if tol.is_finite() && tol > 0.0 {
        PSD_TOL_BITS.store(tol.to_bits(), Ordering::Relaxed);
    }
}

/// A natural-log probability mass. May be `-inf` (zero mass) but never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO_MASS: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value == f64::INFINITY {
            return Err(BoneError::numeric("LogWeight", format!("invalid log mass {value}")));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Gaussian belief over model parameters: mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussBelief {
    /// Builds a belief, checking dimensions and repairing the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(BoneError::contract(format!(
                "belief mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(BoneError::numeric("GaussBelief", "mean has non-finite entries"));
        }
        let cov = symmetrize_psd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// `N(mean, var * I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let m = mean.len();
        Self::new(mean, DMatrix::identity(m, m) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Draws one sample `mean + L z`, where `L L^T = cov`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + psd_sqrt(&self.cov) * z
    }
}

/// Linear-Gaussian parameter dynamics `theta_t = F theta_{t-1} + b + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub transition: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub noise: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(transition: DMatrix<f64>, bias: DVector<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let m = bias.len();
        if transition.shape() != (m, m) || noise.shape() != (m, m) {
            return Err(BoneError::contract(format!(
                "dynamics dimensions disagree: F {:?}, b {}, Q {:?}",
                transition.shape(),
                m,
                noise.shape()
            )));
        }
        let noise = symmetrize_psd(&noise)?;
        Ok(Self {
            transition,
            bias,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }
}

/// `log sum exp(values)` without overflow. `-inf` entries contribute no mass.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(BoneError::contract("logsumexp of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(BoneError::numeric("logsumexp", "NaN input"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf, or a +inf dominates
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Returns `(A + A^T) / 2`, shifting the diagonal up when the smallest eigenvalue is
/// a small negative number within tolerance.
pub fn symmetrize_psd(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(BoneError::contract(format!(
            "expected a square matrix, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(BoneError::numeric("symmetrize_psd", "matrix has non-finite entries"));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    if sym.nrows() == 0 || Cholesky::new(sym.clone()).is_some() {
        return Ok(sym);
    }
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if min_eig >= 0.0 {
        return Ok(sym);
    }
    let threshold = psd_tolerance() * sym.trace().abs().max(1.0);
    if min_eig < -threshold {
        return Err(BoneError::numeric(
            "symmetrize_psd",
            format!("smallest eigenvalue {min_eig:e} is below -{threshold:e} for matrix {sym}"),
        ));
    }
    let n = sym.nrows();
    Ok(sym + DMatrix::identity(n, n) * (-min_eig))
}

/// Cholesky factor of a symmetric positive-definite matrix, with a named error on failure.
pub(crate) fn cholesky(what: &'static str, a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize_psd(a)?;
    Cholesky::new(sym).ok_or_else(|| {
        BoneError::numeric(what, format!("matrix is singular (not positive definite): {a}"))
    })
}

/// Square root `L` with `L L^T = a` for a PSD matrix; falls back to the eigen
/// decomposition when `a` is singular.
pub(crate) fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(a.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// `log N(y | mean, cov)` via a Cholesky factorisation.
pub fn gaussian_log_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = y.len();
    if mean.len() != d || cov.shape() != (d, d) {
        return Err(BoneError::contract(format!(
            "gaussian_log_pdf: y has length {d}, mean {}, covariance {:?}",
            mean.len(),
            cov.shape()
        )));
    }
    let chol = cholesky("gaussian_log_pdf covariance", cov)?;
    let diff = y - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| BoneError::numeric("gaussian_log_pdf covariance", "triangular solve failed"))?;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    Ok(-0.5 * d as f64 * (2.0 * PI).ln() - log_det_half - 0.5 * z.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

    #[test]
    fn log_pdf_standard_normal() {
        let v = gaussian_log_pdf(&dvector![0.0], &dvector![0.0], &dmatrix![1.0]).unwrap();
        assert!((v + HALF_LOG_2PI).abs() < 1e-12);
        let v = gaussian_log_pdf(&dvector![1.0], &dvector![0.0], &dmatrix![1.0]).unwrap();
        assert!((v + HALF_LOG_2PI + 0.5).abs() < 1e-12);
        assert!((v + 1.418_938_5).abs() < 1e-7);
    }

    #[test]
    fn log_pdf_diagonal_factorises() {
        let joint = gaussian_log_pdf(
            &dvector![1.0, 2.0],
            &dvector![0.0, 0.0],
            &dmatrix![1.0, 0.0; 0.0, 4.0],
        )
        .unwrap();
        let a = gaussian_log_pdf(&dvector![1.0], &dvector![0.0], &dmatrix![1.0]).unwrap();
        let b = gaussian_log_pdf(&dvector![2.0], &dvector![0.0], &dmatrix![4.0]).unwrap();
        assert!((joint - (a + b)).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_integrates_to_one() {
        // trapezoid on [-12, 12]
        let n = 24_001;
        let h = 24.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let y = -12.0 + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * gaussian_log_pdf(&dvector![y], &dvector![0.7], &dmatrix![1.0]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-4);
    }

    #[test]
    fn log_pdf_rejects_indefinite_covariance() {
        let err = gaussian_log_pdf(
            &dvector![0.0, 0.0],
            &dvector![0.0, 0.0],
            &dmatrix![1.0, 2.0; 2.0, 1.0],
        )
        .unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("symmetrize_psd"));
    }

    #[test]
    fn logsumexp_examples() {
        let half = 0.5f64.ln();
        assert!(logsumexp(&[half, half]).unwrap().abs() < 1e-15);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        let v = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(logsumexp(&[]), Err(BoneError::Contract(_))));
    }

    #[test]
    fn symmetrize_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(symmetrize_psd(&i).unwrap(), i);
        let a = dmatrix![1.0, 0.5; 0.3, 1.0];
        let s = symmetrize_psd(&a).unwrap();
        assert!((s - dmatrix![1.0, 0.4; 0.4, 1.0]).abs().max() < 1e-15);
        let v = dvector![1.0, -2.0, 0.5];
        let outer = &v * v.transpose();
        let s = symmetrize_psd(&outer).unwrap();
        assert!((s - &outer).abs().max() < 1e-12);
    }

    #[test]
    fn symmetrize_rejects_negative_eigenvalue() {
        let bad = dmatrix![1.0, 0.0; 0.0, -1e-3];
        assert!(symmetrize_psd(&bad).unwrap_err().is_numeric());
        let slightly = dmatrix![1.0, 0.0; 0.0, -1e-12];
        let fixed = symmetrize_psd(&slightly).unwrap();
        assert!(SymmetricEigen::new(fixed).eigenvalues.min() >= -1e-15);
    }

    #[test]
    fn log_weight_rejects_nan() {
        assert!(LogWeight::new(f64::NAN).is_err());
        assert!(LogWeight::new(f64::NEG_INFINITY).is_ok());
    }

    proptest! {
        #[test]
        fn logsumexp_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..20), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = logsumexp(&v).unwrap();
            let b = logsumexp(&shifted).unwrap();
            prop_assert!((b - (a + c)).abs() <= 1e-12 * (1.0 + c.abs()).max(1.0));
            prop_assert!(a >= v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }

        #[test]
        fn symmetrize_is_idempotent(entries in prop::collection::vec(-3.0f64..3.0, 9), asym in prop::collection::vec(-1e-3f64..1e-3, 9)) {
            let b = DMatrix::from_vec(3, 3, entries);
            let noise = DMatrix::from_vec(3, 3, asym);
            let a = &b * b.transpose() + noise * 1e-9;
            let once = symmetrize_psd(&a).unwrap();
            let twice = symmetrize_psd(&once).unwrap();
            prop_assert!((&twice - &once).abs().max() <= 1e-12 * (1.0 + once.abs().max()));
            prop_assert_eq!(once.clone(), once.transpose());
        }
    }
}
