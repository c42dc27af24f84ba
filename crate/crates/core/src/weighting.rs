//! Weighting over auxiliary values: the runlength recursion with optional top-K
//! pruning, the single-hypothesis greedy ratio and the empirical-Bayes changepoint
//! probability.

use nalgebra::DVector;

use crate::error::{BoneError, Result};
use crate::measurement::{predictive_log_density, MeasurementSpec, SegmentAnchor};
use crate::numeric::{logsumexp, GaussBelief, LogWeight};
use crate::posterior::{update_with_evidence, UpdateRule};
use crate::priors::{conditional_prior, mmpr_prior, ou_blend, Aux, PriorKind, PriorPolicy};

/// Constant hazard `H(r) = pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardSpec {
    pi: f64,
}

impl HazardSpec {
    pub fn new(pi: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(BoneError::config(format!("hazard rate must lie in (0, 1), got {pi}")));
        }
        Ok(Self { pi })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Changepoint probability after a run of length `r`.
    pub fn at(&self, _runlength: usize) -> f64 {
        self.pi
    }
}

/// Maximum number of hypotheses kept after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Bounded(usize),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub runlength: usize,
    /// `log p(r_t, y_{1:t})`, unnormalised.
    pub log_joint: LogWeight,
    pub belief: GaussBelief,
    pub anchor: Option<SegmentAnchor>,
}

/// The tracked runlength hypotheses, ordered by increasing runlength.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBank {
    hypotheses: Vec<Hypothesis>,
    capacity: Capacity,
    timestep: usize,
}

impl HypothesisBank {
    /// A bank holding only the base prior at `t = 0`.
    pub fn root(base: GaussBelief, capacity: Capacity) -> Self {
        Self {
            hypotheses: vec![Hypothesis {
                runlength: 0,
                log_joint: LogWeight::ONE,
                belief: base,
                anchor: None,
            }],
            capacity,
            timestep: 0,
        }
    }

    pub fn from_parts(mut hypotheses: Vec<Hypothesis>, capacity: Capacity, timestep: usize) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(BoneError::contract("a hypothesis bank needs at least one hypothesis"));
        }
        if let Capacity::Bounded(0) = capacity {
            return Err(BoneError::config("bank capacity must be at least 1"));
        }
        hypotheses.sort_by_key(|h| h.runlength);
        if hypotheses.windows(2).any(|w| w[0].runlength == w[1].runlength) {
            return Err(BoneError::contract("runlengths in a bank must be distinct"));
        }
        if hypotheses.last().map(|h| h.runlength > timestep).unwrap_or(false) {
            return Err(BoneError::contract("a runlength exceeds the current timestep"));
        }
        Ok(Self {
            hypotheses,
            capacity,
            timestep,
        })
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    fn log_joints(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.log_joint.value()).collect()
    }

    /// `log p(r_t | y_{1:t})` for each hypothesis, paired with its runlength.
    pub fn log_posterior(&self) -> Result<Vec<(usize, f64)>> {
        let joints = self.log_joints();
        let total = logsumexp(&joints)?;
        if total == f64::NEG_INFINITY {
            return Err(BoneError::numeric("hypothesis bank", "every hypothesis has zero mass"));
        }
        Ok(self.hypotheses.iter().zip(joints).map(|(h, j)| (h.runlength, j - total)).collect())
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        Ok(self.log_posterior()?.into_iter().map(|(_, lp)| lp.exp()).collect())
    }

    /// The weight-argmax hypothesis; ties go to the larger runlength.
    pub fn modal(&self) -> &Hypothesis {
        self.hypotheses
            .iter()
            .rev()
            .fold(None::<&Hypothesis>, |best, h| match best {
                Some(b) if b.log_joint.value() >= h.log_joint.value() => Some(b),
                _ => Some(h),
            })
            .expect("banks are never empty")
    }

    /// Replaces the contents with a single hypothesis (used by one-hypothesis methods).
    pub(crate) fn set_single(&mut self, hypothesis: Hypothesis, timestep: usize) {
        self.hypotheses = vec![hypothesis];
        self.timestep = timestep;
    }
}

/// Keeps the `k` hypotheses with the largest joint mass, ties going to the larger runlength.
pub fn prune_topk(bank: &HypothesisBank, k: usize) -> Result<HypothesisBank> {
    if k == 0 {
        return Err(BoneError::contract("prune_topk needs k >= 1"));
    }
    if bank.len() <= k {
        return Ok(bank.clone());
    }
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| {
        let (ha, hb) = (&bank.hypotheses[a], &bank.hypotheses[b]);
        hb.log_joint
            .value()
            .total_cmp(&ha.log_joint.value())
            .then(hb.runlength.cmp(&ha.runlength))
    });
    order.truncate(k);
    order.sort_unstable();
    Ok(HypothesisBank {
        hypotheses: order.into_iter().map(|i| bank.hypotheses[i].clone()).collect(),
        capacity: bank.capacity,
        timestep: bank.timestep,
    })
}

/// One step of the runlength recursion: every hypothesis either grows by one or
/// the run restarts; the restart collects the mass of all previous hypotheses.
pub fn rl_step(
    bank: &HypothesisBank,
    hazard: &HazardSpec,
    spec: &MeasurementSpec,
    policy: &PriorPolicy,
    rule: UpdateRule,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<HypothesisBank> {
    if bank.is_empty() {
        return Err(BoneError::contract("rl_step on an empty bank"));
    }
    let reset_prior = match policy.kind {
        PriorKind::RlPriorReset => policy.base.clone(),
        PriorKind::RlMmpr => mmpr_prior(bank, hazard)?,
        ref other => {
            return Err(BoneError::config(format!(
                "the runlength recursion needs a reset prior, not `{}`",
                other.name()
            )))
        }
    };
    let pi = hazard.pi();
    let (log_pi, log_stay) = (pi.ln(), (-pi).ln_1p());
    let fresh_anchor = spec.needs_anchor().then(|| SegmentAnchor { anchor_x: x[0] });

    let mut next = Vec::with_capacity(bank.len() + 1);
    let evidence_mass = logsumexp(&bank.log_joints())?;
    let (belief, _, log_density) = update_with_evidence(rule, &reset_prior, spec, x, y, fresh_anchor.as_ref())
        .map_err(|e| e.at_hypothesis(0))?;
    next.push(Hypothesis {
        runlength: 0,
        log_joint: LogWeight::new(log_density + log_pi + evidence_mass)?,
        belief,
        anchor: fresh_anchor,
    });

    for (k, h) in bank.hypotheses.iter().enumerate() {
        let grow = || -> Result<Hypothesis> {
            let runlength = h.runlength + 1;
            let prior = conditional_prior(policy, &h.belief, Aux::Runlength(runlength), None)?;
            let anchor = h.anchor.or(fresh_anchor);
            let (belief, _, log_density) = update_with_evidence(rule, &prior, spec, x, y, anchor.as_ref())?;
            Ok(Hypothesis {
                runlength,
                log_joint: LogWeight::new(h.log_joint.value() + log_density + log_stay)?,
                belief,
                anchor,
            })
        };
        next.push(grow().map_err(|e| e.at_hypothesis(k + 1))?);
    }

    let stepped = HypothesisBank {
        hypotheses: next,
        capacity: bank.capacity,
        timestep: bank.timestep + 1,
    };
    match bank.capacity {
        Capacity::Bounded(k) => prune_topk(&stepped, k),
        Capacity::Unbounded => Ok(stepped),
    }
}

/// Posterior probability of continuing the current run against restarting it:
/// `e^{g}(1 - pi) / (e^{r} pi + e^{g}(1 - pi))`, computed from the log-odds.
pub fn greedy_ratio(p_grow: f64, p_reset: f64, hazard: &HazardSpec) -> Result<f64> {
    if p_grow == f64::NEG_INFINITY && p_reset == f64::NEG_INFINITY {
        return Err(BoneError::contract("greedy_ratio with both densities equal to zero"));
    }
    if p_grow.is_nan() || p_reset.is_nan() {
        return Err(BoneError::numeric("greedy_ratio", "NaN log-density"));
    }
    let pi = hazard.pi();
    let log_odds = (p_grow + (-pi).ln_1p()) - (p_reset + pi.ln());
    Ok(crate::measurement::sigmoid(log_odds))
}

/// Projected gradient ascent (central differences, backtracking) on the
/// changepoint probability `upsilon` of the OU blend between `prev` and `base`,
/// maximising `log p(y | x, upsilon)`. Starts at 1.
#[allow(clippy::too_many_arguments)]
pub fn cpp_empirical_bayes(
    prev: &GaussBelief,
    base: &GaussBelief,
    spec: &MeasurementSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    steps: usize,
    lr: f64,
    anchor: Option<&SegmentAnchor>,
) -> Result<f64> {
    if steps == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(BoneError::config(format!(
            "empirical Bayes needs steps >= 1 and lr > 0 (got {steps}, {lr})"
        )));
    }
    const FD_STEP: f64 = 1e-4;
    const GRAD_TOL: f64 = 1e-9;
    let objective = |u: f64| -> Result<f64> { predictive_log_density(spec, &ou_blend(prev, base, u)?, x, y, anchor) };

    let mut u = 1.0;
    let mut value = objective(u)?;
    let mut lr = lr;
    for _ in 0..steps {
        let (lo, hi) = ((u - FD_STEP).max(0.0), (u + FD_STEP).min(1.0));
        let grad = (objective(hi)? - objective(lo)?) / (hi - lo);
        if !grad.is_finite() || grad.abs() < GRAD_TOL {
            break;
        }
        let mut moved = false;
        for _ in 0..40 {
            let candidate = (u + lr * grad).clamp(0.0, 1.0);
            if candidate == u {
                break;
            }
            let cv = objective(candidate)?;
            if cv > value {
                u = candidate;
                value = cv;
                moved = true;
                break;
            }
            lr *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(u)
}
