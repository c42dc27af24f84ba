//! Recursive Gaussian posterior computation: predict step, linearised Gaussian
//! update (exact Kalman update for linear models, EKF / ExpfamEKF otherwise) and the
//! outlier-robust WoLF-IMQ update.

use nalgebra::{DMatrix, DVector};

use crate::error::{BoneError, Result};
use crate::measurement::{linearize, predictive_log_density_from, Linearization, MeasurementSpec, SegmentAnchor};
use crate::numeric::{cholesky, symmetrize_psd, GaussBelief, LinearDynamics};

/// Quantities computed during one update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// `y - yhat`, in update coordinates.
    pub innovation: DVector<f64>,
    /// `S = H Sigma H^T + R` (with the effective `R`).
    pub innovation_cov: DMatrix<f64>,
    /// Frobenius norm of the gain `K`.
    pub gain_norm: f64,
    /// WoLF weight; 1 for non-robust updates.
    pub wolf_weight: f64,
}

/// Which update rule a method uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Lg,
    Wolf { c: f64 },
}

/// `N(F mu + b, F Sigma F^T + Q)`.
pub fn kf_predict(belief: &GaussBelief, dynamics: &LinearDynamics) -> Result<GaussBelief> {
    if belief.dim() != dynamics.dim() {
        return Err(BoneError::contract(format!(
            "belief has dimension {} but dynamics has {}",
            belief.dim(),
            dynamics.dim()
        )));
    }
    let f = &dynamics.transition;
    let mean = f * belief.mean() + &dynamics.bias;
    let cov = f * belief.cov() * f.transpose() + &dynamics.noise;
    GaussBelief::new(mean, cov)
}

/// Kalman update of `prior` against a local linear-Gaussian observation model.
pub(crate) fn update_linearized(
    prior: &GaussBelief,
    lin: &Linearization,
    wolf_weight: f64,
) -> Result<(GaussBelief, UpdateDiagnostics)> {
    let h = &lin.jac;
    let sigma = prior.cov();
    let sigma_ht = sigma * h.transpose();
    let s = symmetrize_psd(&(h * &sigma_ht + &lin.noise))?;
    let chol = cholesky("innovation covariance", &s)?;
    // K = Sigma H^T S^{-1}  <=>  S K^T = H Sigma
    let gain = chol.solve(&sigma_ht.transpose()).transpose();
    let innovation = &lin.y - &lin.yhat;
    let mean = prior.mean() + &gain * &innovation;
    let cov = sigma - &gain * &s * gain.transpose();
    let post = GaussBelief::new(mean, cov)?;
    let diagnostics = UpdateDiagnostics {
        innovation,
        innovation_cov: s,
        gain_norm: gain.norm(),
        wolf_weight,
    };
    Ok((post, diagnostics))
}

/// Linearised Gaussian update at the prior mean.
pub fn lg_update(
    prior: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<(GaussBelief, UpdateDiagnostics)> {
    let lin = linearize(spec, prior.mean(), x, y, anchor)?;
    update_linearized(prior, &lin, 1.0)
}

/// IMQ weight `(1 + e^T R^{-1} e / c^2)^{-1/2}`.
pub fn imq_weight(residual: &DVector<f64>, noise: &DMatrix<f64>, c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(BoneError::contract(format!("WoLF threshold must be positive, got {c}")));
    }
    let chol = cholesky("observation noise", noise)?;
    let mahal = residual.dot(&chol.solve(residual));
    Ok((1.0 + mahal / (c * c)).powf(-0.5))
}

/// Linearisation with `R` replaced by `R / W^2`; returns the weight alongside.
pub(crate) fn wolf_linearize(
    spec: &MeasurementSpec,
    prior: &GaussBelief,
    x: &DVector<f64>,
    y: &DVector<f64>,
    c: f64,
    anchor: Option<&SegmentAnchor>,
) -> Result<(Linearization, f64)> {
    if !spec.family().is_gaussian() {
        return Err(BoneError::UnsupportedFamily {
            op: "wolf_update",
            family: spec.family().name(),
        });
    }
    let mut lin = linearize(spec, prior.mean(), x, y, anchor)?;
    let w = imq_weight(&(&lin.y - &lin.yhat), &lin.noise, c)?;
    lin.noise /= w * w;
    Ok((lin, w))
}

/// WoLF-IMQ update: an LG update with the observation covariance inflated by `W^{-2}`.
pub fn wolf_update(
    prior: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    c: f64,
    anchor: Option<&SegmentAnchor>,
) -> Result<(GaussBelief, UpdateDiagnostics)> {
    let (lin, w) = wolf_linearize(spec, prior, x, y, c, anchor)?;
    update_linearized(prior, &lin, w)
}

/// Dispatches on the update rule.
pub fn update(
    rule: UpdateRule,
    prior: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<(GaussBelief, UpdateDiagnostics)> {
    match rule {
        UpdateRule::Lg => lg_update(prior, spec, x, y, anchor),
        UpdateRule::Wolf { c } => wolf_update(prior, spec, x, y, c, anchor),
    }
}

/// Runs the update and also returns the log predictive density of `y` under the
/// same linearisation (with the inflated `R` for WoLF).
pub fn update_with_evidence(
    rule: UpdateRule,
    prior: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<(GaussBelief, UpdateDiagnostics, f64)> {
    let (lin, w) = match rule {
        UpdateRule::Lg => (linearize(spec, prior.mean(), x, y, anchor)?, 1.0),
        UpdateRule::Wolf { c } => wolf_linearize(spec, prior, x, y, c, anchor)?,
    };
    let log_density = predictive_log_density_from(&lin, prior.cov())?;
    let (post, diag) = update_linearized(prior, &lin, w)?;
    Ok((post, diag, log_density))
}

/// Log predictive density of `y` under the linearisation the update rule would use.
pub fn rule_log_density(
    rule: UpdateRule,
    prior: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<f64> {
    let lin = match rule {
        UpdateRule::Lg => linearize(spec, prior.mean(), x, y, anchor)?,
        UpdateRule::Wolf { c } => wolf_linearize(spec, prior, x, y, c, anchor)?.0,
    };
    predictive_log_density_from(&lin, prior.cov())
}
