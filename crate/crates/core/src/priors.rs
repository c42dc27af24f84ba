//! Conditional priors: how the belief carried over from the last step is turned
//! into the prior for the current step, given the auxiliary variable.

use nalgebra::{DMatrix, DVector};

use crate::error::{BoneError, Result};
use crate::numeric::{GaussBelief, LinearDynamics};
use crate::posterior::kf_predict;
use crate::weighting::{HazardSpec, HypothesisBank};

/// The prior construction rule and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorKind {
    /// Keep the previous belief.
    Static,
    /// Ornstein-Uhlenbeck pull toward the base prior at rate `gamma`.
    Ou { gamma: f64 },
    /// Additive covariance inflation by `alpha * I`.
    Aci { alpha: f64 },
    /// Mean shrunk by `shrink`, covariance inflated by `perturb * I`. When `perturb`
    /// is absent the mean of the base covariance diagonal is used.
    ShrinkPerturb { shrink: f64, perturb: Option<f64> },
    /// Linear-Gaussian state-space dynamics.
    Lssm { dynamics: LinearDynamics },
    /// OU pull whose rate is the changepoint variable supplied at each step.
    CppOu,
    /// Reset to the base prior on a changepoint, keep the belief otherwise.
    RlPriorReset,
    /// As `RlPriorReset`, but resets to the moment-matched mixture of the hypothesis bank.
    RlMmpr,
    /// OU blend with weight `nu` when `nu > epsilon`, otherwise reset to the base prior.
    RlOupr { epsilon: f64 },
}

impl PriorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Ou { .. } => "ou",
            Self::Aci { .. } => "aci",
            Self::ShrinkPerturb { .. } => "shrink-perturb",
            Self::Lssm { .. } => "lssm",
            Self::CppOu => "cpp-ou",
            Self::RlPriorReset => "rl-prior-reset",
            Self::RlMmpr => "rl-mmpr",
            Self::RlOupr { .. } => "rl-oupr",
        }
    }

    /// True for rules that need no data to be applied.
    pub fn is_data_free(&self) -> bool {
        matches!(
            self,
            Self::Static | Self::Ou { .. } | Self::Aci { .. } | Self::ShrinkPerturb { .. } | Self::Lssm { .. }
        )
    }
}

/// A prior rule together with the base prior `(mu_0, Sigma_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPolicy {
    pub kind: PriorKind,
    pub base: GaussBelief,
}

impl PriorPolicy {
    pub fn new(kind: PriorKind, base: GaussBelief) -> Result<Self> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(BoneError::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match &kind {
            PriorKind::Ou { gamma } => unit("gamma", *gamma)?,
            PriorKind::RlOupr { epsilon } => unit("epsilon", *epsilon)?,
            PriorKind::Aci { alpha } => {
                if !(*alpha >= 0.0 && alpha.is_finite()) {
                    return Err(BoneError::config(format!("alpha must be non-negative, got {alpha}")));
                }
            }
            PriorKind::ShrinkPerturb { shrink, perturb } => {
                if !(*shrink > 0.0 && *shrink < 1.0) {
                    return Err(BoneError::config(format!("shrink must lie in (0, 1), got {shrink}")));
                }
                if let Some(p) = perturb {
                    if !(*p >= 0.0 && p.is_finite()) {
                        return Err(BoneError::config(format!("perturb must be non-negative, got {p}")));
                    }
                }
            }
            PriorKind::Lssm { dynamics } => {
                if dynamics.dim() != base.dim() {
                    return Err(BoneError::config(format!(
                        "dynamics dimension {} does not match the base prior dimension {}",
                        dynamics.dim(),
                        base.dim()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { kind, base })
    }
}

/// The auxiliary variable value for the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aux {
    /// Constant auxiliary variable of the `C-*` methods.
    None,
    /// Runlength `r_t`.
    Runlength(usize),
    /// Changepoint probability `upsilon_t` in `[0, 1]`.
    ChangeProb(f64),
}

pub(crate) fn ou_blend(prev: &GaussBelief, base: &GaussBelief, rate: f64) -> Result<GaussBelief> {
    let mean = prev.mean() * rate + base.mean() * (1.0 - rate);
    let cov = prev.cov() * (rate * rate) + base.cov() * (1.0 - rate * rate);
    GaussBelief::new(mean, cov)
}

fn aux_mismatch(kind: &PriorKind, aux: Aux) -> BoneError {
    BoneError::contract(format!("prior `{}` cannot use auxiliary value {aux:?}", kind.name()))
}

/// Builds the conditional prior for the current step from the previous belief.
pub fn conditional_prior(policy: &PriorPolicy, prev: &GaussBelief, aux: Aux, weight: Option<f64>) -> Result<GaussBelief> {
    if prev.dim() != policy.base.dim() {
        return Err(BoneError::contract(format!(
            "belief dimension {} does not match the base prior dimension {}",
            prev.dim(),
            policy.base.dim()
        )));
    }
    let kind = &policy.kind;
    if kind.is_data_free() && aux != Aux::None {
        return Err(aux_mismatch(kind, aux));
    }
    let m = prev.dim();
    match kind {
        PriorKind::Static => Ok(prev.clone()),
        PriorKind::Ou { gamma } => ou_blend(prev, &policy.base, *gamma),
        PriorKind::Aci { alpha } => GaussBelief::new(prev.mean().clone(), prev.cov() + DMatrix::identity(m, m) * *alpha),
        PriorKind::ShrinkPerturb { shrink, perturb } => {
            let var = perturb.unwrap_or_else(|| policy.base.cov().diagonal().mean());
            GaussBelief::new(prev.mean() * *shrink, prev.cov() + DMatrix::identity(m, m) * var)
        }
        PriorKind::Lssm { dynamics } => kf_predict(prev, dynamics),
        PriorKind::CppOu => match aux {
            Aux::ChangeProb(u) if (0.0..=1.0).contains(&u) => ou_blend(prev, &policy.base, u),
            _ => Err(aux_mismatch(kind, aux)),
        },
        PriorKind::RlPriorReset | PriorKind::RlMmpr => match aux {
            Aux::Runlength(0) if matches!(kind, PriorKind::RlPriorReset) => Ok(policy.base.clone()),
            Aux::Runlength(0) => Err(BoneError::contract("the MMPR reset prior is built by mmpr_prior")),
            Aux::Runlength(_) => Ok(prev.clone()),
            _ => Err(aux_mismatch(kind, aux)),
        },
        PriorKind::RlOupr { epsilon } => {
            if !matches!(aux, Aux::Runlength(_)) {
                return Err(aux_mismatch(kind, aux));
            }
            let nu = weight.ok_or_else(|| BoneError::config("rl-oupr prior needs the continuation weight nu"))?;
            if nu > *epsilon {
                ou_blend(prev, &policy.base, nu)
            } else {
                Ok(policy.base.clone())
            }
        }
    }
}

/// Gaussian matching the first two moments of the bank's mixture, weighted by the
/// normalised hypothesis weights (the constant hazard factor cancels).
pub fn mmpr_prior(bank: &HypothesisBank, hazard: &HazardSpec) -> Result<GaussBelief> {
    let _ = hazard;
    let hyps = bank.hypotheses();
    if hyps.is_empty() {
        return Err(BoneError::contract("mmpr_prior of an empty bank"));
    }
    let weights = bank.normalized_weights()?;
    let m = hyps[0].belief.dim();
    let mut mean = DVector::zeros(m);
    let mut second = DMatrix::zeros(m, m);
    for (h, w) in hyps.iter().zip(&weights) {
        let mu = h.belief.mean();
        mean += mu * *w;
        second += (h.belief.cov() + mu * mu.transpose()) * *w;
    }
    let cov = second - &mean * mean.transpose();
    GaussBelief::new(mean, cov)
}
