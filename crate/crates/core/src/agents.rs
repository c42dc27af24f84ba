//! Named methods and the generic predict/update step.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{BoneError, Result};
use crate::measurement::{apply_h, MeasurementSpec, SegmentAnchor};
use crate::numeric::LogWeight;
use crate::posterior::{rule_log_density, update_with_evidence, UpdateRule};
use crate::priors::{conditional_prior, Aux, PriorKind, PriorPolicy};
use crate::weighting::{cpp_empirical_bayes, greedy_ratio, rl_step, Capacity, HazardSpec, Hypothesis, HypothesisBank};

/// The methods that can be assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    CStatic,
    CAci,
    COu,
    CppOu,
    CLssm,
    CShrinkPerturb,
    RlPr,
    WolfRlPr,
    RlMmpr,
    RlOupr,
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::CStatic => "C-Static",
            Self::CAci => "C-ACI",
            Self::COu => "C-OU",
            Self::CppOu => "CPP-OU",
            Self::CLssm => "C-LSSM",
            Self::CShrinkPerturb => "C-ShrinkPerturb",
            Self::RlPr => "RL-PR",
            Self::WolfRlPr => "WoLF+RL-PR",
            Self::RlMmpr => "RL-MMPR",
            Self::RlOupr => "RL-OUPR",
        }
    }

    /// Methods carrying a full runlength bank.
    pub fn is_runlength_bank(&self) -> bool {
        matches!(self, Self::RlPr | Self::WolfRlPr | Self::RlMmpr)
    }

    fn expected_prior(&self) -> &'static str {
        match self {
            Self::CStatic => "static",
            Self::CAci => "aci",
            Self::COu => "ou",
            Self::CppOu => "cpp-ou",
            Self::CLssm => "lssm",
            Self::CShrinkPerturb => "shrink-perturb",
            Self::RlPr | Self::WolfRlPr => "rl-prior-reset",
            Self::RlMmpr => "rl-mmpr",
            Self::RlOupr => "rl-oupr",
        }
    }
}

/// A method name as written in configs, e.g. `RL-PR[10]` or `RL-PR[inf]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodName {
    pub kind: MethodKind,
    pub capacity: Option<Capacity>,
}

impl FromStr for MethodName {
    type Err = BoneError;

    fn from_str(s: &str) -> Result<Self> {
        let (base, capacity) = match s.find('[') {
            Some(open) if s.ends_with(']') => {
                let inner = &s[open + 1..s.len() - 1];
                let cap = if inner == "inf" {
                    Capacity::Unbounded
                } else {
                    let k: usize = inner
                        .parse()
                        .map_err(|_| BoneError::config(format!("bad capacity `{inner}` in method name `{s}`")))?;
                    if k == 0 {
                        return Err(BoneError::config("bank capacity must be at least 1"));
                    }
                    Capacity::Bounded(k)
                };
                (&s[..open], Some(cap))
            }
            _ => (s, None),
        };
        let kind = match base {
            "C-Static" => MethodKind::CStatic,
            "C-ACI" => MethodKind::CAci,
            "C-OU" => MethodKind::COu,
            "CPP-OU" => MethodKind::CppOu,
            "C-LSSM" => MethodKind::CLssm,
            "C-ShrinkPerturb" => MethodKind::CShrinkPerturb,
            "RL-PR" => MethodKind::RlPr,
            "WoLF+RL-PR" => MethodKind::WolfRlPr,
            "RL-MMPR" => MethodKind::RlMmpr,
            "RL-OUPR" => MethodKind::RlOupr,
            other => return Err(BoneError::config(format!("unknown method `{other}`"))),
        };
        if capacity.is_some() && !kind.is_runlength_bank() {
            return Err(BoneError::config(format!("method `{base}` takes no bank capacity")));
        }
        Ok(Self { kind, capacity })
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.capacity {
            Some(Capacity::Bounded(k)) => write!(f, "{}[{k}]", self.kind.label()),
            Some(Capacity::Unbounded) => write!(f, "{}[inf]", self.kind.label()),
            None => f.write_str(self.kind.label()),
        }
    }
}

/// Inner gradient-ascent settings for the empirical-Bayes changepoint probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CppSettings {
    pub steps: usize,
    pub lr: f64,
}

impl Default for CppSettings {
    fn default() -> Self {
        Self { steps: 10, lr: 0.1 }
    }
}

/// A fully specified method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub spec: MeasurementSpec,
    pub policy: PriorPolicy,
    pub hazard: Option<HazardSpec>,
    pub capacity: Capacity,
    pub wolf_c: Option<f64>,
    pub cpp: CppSettings,
}

impl MethodConfig {
    /// Checks that the sub-configurations required by `kind` are present and consistent.
    pub fn new(
        kind: MethodKind,
        spec: MeasurementSpec,
        policy: PriorPolicy,
        hazard: Option<HazardSpec>,
        capacity: Capacity,
        wolf_c: Option<f64>,
        cpp: Option<CppSettings>,
    ) -> Result<Self> {
        if policy.kind.name() != kind.expected_prior() {
            return Err(BoneError::config(format!(
                "method {} needs a `{}` prior, got `{}`",
                kind.label(),
                kind.expected_prior(),
                policy.kind.name()
            )));
        }
        if policy.base.dim() != spec.param_count() {
            return Err(BoneError::config(format!(
                "base prior has dimension {} but the model has {} parameters",
                policy.base.dim(),
                spec.param_count()
            )));
        }
        let needs_hazard = kind.is_runlength_bank() || kind == MethodKind::RlOupr;
        if needs_hazard && hazard.is_none() {
            return Err(BoneError::config(format!("method {} needs a hazard rate", kind.label())));
        }
        if kind == MethodKind::WolfRlPr && wolf_c.is_none() {
            return Err(BoneError::config("WoLF+RL-PR needs wolf_c"));
        }
        if let Some(c) = wolf_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(BoneError::config(format!("wolf_c must be positive, got {c}")));
            }
            if !spec.family().is_gaussian() {
                return Err(BoneError::config(format!(
                    "WoLF needs a Gaussian likelihood, not {}",
                    spec.family().name()
                )));
            }
        }
        let cpp = cpp.unwrap_or_default();
        if cpp.steps == 0 || !(cpp.lr > 0.0 && cpp.lr.is_finite()) {
            return Err(BoneError::config("cpp settings need steps >= 1 and lr > 0"));
        }
        let capacity = if kind.is_runlength_bank() { capacity } else { Capacity::Bounded(1) };
        if capacity == Capacity::Bounded(0) {
            return Err(BoneError::config("bank capacity must be at least 1"));
        }
        Ok(Self {
            kind,
            spec,
            policy,
            hazard,
            capacity,
            wolf_c,
            cpp,
        })
    }

    pub fn update_rule(&self) -> UpdateRule {
        match self.wolf_c {
            Some(c) => UpdateRule::Wolf { c },
            None => UpdateRule::Lg,
        }
    }

    /// Display name including the bank capacity for runlength methods.
    pub fn display_name(&self) -> String {
        let capacity = self.kind.is_runlength_bank().then_some(self.capacity);
        MethodName {
            kind: self.kind,
            capacity,
        }
        .to_string()
    }

    fn hazard(&self) -> Result<&HazardSpec> {
        self.hazard
            .as_ref()
            .ok_or_else(|| BoneError::config(format!("method {} needs a hazard rate", self.kind.label())))
    }
}

/// The running state of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    bank: HypothesisBank,
}

impl AgentState {
    pub fn new(cfg: &MethodConfig) -> Self {
        Self {
            bank: HypothesisBank::root(cfg.policy.base.clone(), cfg.capacity),
        }
    }

    pub fn bank(&self) -> &HypothesisBank {
        &self.bank
    }

    pub fn timestep(&self) -> usize {
        self.bank.timestep()
    }
}

/// Weighted plug-in prediction and the per-hypothesis terms it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub per_hypothesis: Vec<(f64, DVector<f64>)>,
}

fn fresh_anchor(spec: &MeasurementSpec, x: &DVector<f64>) -> Option<SegmentAnchor> {
    spec.needs_anchor().then(|| SegmentAnchor { anchor_x: x[0] })
}

/// `sum_k w_k h(mu_k; x)` over the bank.
pub fn predict(state: &AgentState, cfg: &MethodConfig, x: &DVector<f64>) -> Result<Prediction> {
    let weights = state.bank.normalized_weights()?;
    let fresh = fresh_anchor(&cfg.spec, x);
    let mut mean = DVector::zeros(cfg.spec.out_dim());
    let mut per_hypothesis = Vec::with_capacity(weights.len());
    for (k, (h, w)) in state.bank.hypotheses().iter().zip(weights).enumerate() {
        let anchor = h.anchor.or(fresh);
        let (yhat, _) = apply_h(&cfg.spec, h.belief.mean(), x, anchor.as_ref()).map_err(|e| e.at_hypothesis(k))?;
        mean += &yhat * w;
        per_hypothesis.push((w, yhat));
    }
    Ok(Prediction { mean, per_hypothesis })
}

fn single_step(state: &mut AgentState, cfg: &MethodConfig, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    let rule = cfg.update_rule();
    let policy = &cfg.policy;
    let current = state.bank.modal().clone();
    let fresh = fresh_anchor(&cfg.spec, x);
    let grow_anchor = current.anchor.or(fresh);

    let (prior, runlength, anchor) = match &policy.kind {
        PriorKind::CppOu => {
            let u = cpp_empirical_bayes(
                &current.belief,
                &policy.base,
                &cfg.spec,
                x,
                y,
                cfg.cpp.steps,
                cfg.cpp.lr,
                grow_anchor.as_ref(),
            )?;
            let prior = conditional_prior(policy, &current.belief, Aux::ChangeProb(u), None)?;
            (prior, current.runlength + 1, grow_anchor)
        }
        PriorKind::RlOupr { epsilon } => {
            let hazard = cfg.hazard()?;
            let p_grow = rule_log_density(rule, &current.belief, &cfg.spec, x, y, grow_anchor.as_ref())?;
            let p_reset = rule_log_density(rule, &policy.base, &cfg.spec, x, y, fresh.as_ref())?;
            let nu = greedy_ratio(p_grow, p_reset, hazard)?;
            let runlength = current.runlength + 1;
            let prior = conditional_prior(policy, &current.belief, Aux::Runlength(runlength), Some(nu))?;
            if nu > *epsilon {
                (prior, runlength, grow_anchor)
            } else {
                (prior, 0, fresh)
            }
        }
        _ => (
            conditional_prior(policy, &current.belief, Aux::None, None)?,
            current.runlength + 1,
            grow_anchor,
        ),
    };
    let (belief, _, _) = update_with_evidence(rule, &prior, &cfg.spec, x, y, anchor.as_ref())?;
    let t = state.bank.timestep() + 1;
    state.bank.set_single(
        Hypothesis {
            runlength,
            log_joint: LogWeight::ONE,
            belief,
            anchor,
        },
        t,
    );
    Ok(())
}

/// One generic step: conditional prior, posterior update and weight refresh for every
/// hypothesis, followed by the weighted prediction at `x_next` when given.
pub fn bone_step(
    state: &mut AgentState,
    cfg: &MethodConfig,
    x: &DVector<f64>,
    y: &DVector<f64>,
    x_next: Option<&DVector<f64>>,
) -> Result<Option<Prediction>> {
    if cfg.kind.is_runlength_bank() {
        state.bank = rl_step(&state.bank, cfg.hazard()?, &cfg.spec, &cfg.policy, cfg.update_rule(), x, y)?;
    } else {
        single_step(state, cfg, x, y).map_err(|e| match e {
            e @ BoneError::Hypothesis { .. } => e,
            e => e.at_hypothesis(0),
        })?;
    }
    x_next.map(|xn| predict(state, cfg, xn)).transpose()
}

/// Applies only the data-free part of the prior (drift of an unobserved bandit arm).
/// Methods whose prior depends on the observation are left unchanged.
pub fn drift_only(state: &mut AgentState, cfg: &MethodConfig) -> Result<()> {
    if !cfg.policy.kind.is_data_free() || cfg.kind.is_runlength_bank() {
        return Ok(());
    }
    let mut h = state.bank.modal().clone();
    h.belief = conditional_prior(&cfg.policy, &h.belief, Aux::None, None)?;
    let t = state.bank.timestep();
    state.bank.set_single(h, t);
    Ok(())
}

/// Thompson sampling: one parameter draw per arm from its modal belief, then the
/// arm with the largest expected reward `h(theta; x)`; ties go to the lowest index.
pub fn thompson_action<R: Rng + ?Sized>(
    arms: &[AgentState],
    cfg: &MethodConfig,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<usize> {
    if arms.is_empty() {
        return Err(BoneError::contract("thompson_action needs at least one arm"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (a, arm) in arms.iter().enumerate() {
        let h = arm.bank.modal();
        let theta = h.belief.sample(rng);
        let anchor = h.anchor.or(fresh_anchor(&cfg.spec, x));
        let (value, _) = apply_h(&cfg.spec, &theta, x, anchor.as_ref())?;
        if value[0] > best.1 {
            best = (a, value[0]);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::FeatureMap;
    use crate::numeric::GaussBelief;
    use crate::posterior::lg_update;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_cfg(kind: MethodKind, prior: PriorKind, hazard: Option<f64>) -> MethodConfig {
        let spec = MeasurementSpec::linear_gaussian(2, FeatureMap::Identity, 0.5).unwrap();
        let base = GaussBelief::isotropic(DVector::zeros(2), 2.0).unwrap();
        MethodConfig::new(
            kind,
            spec,
            PriorPolicy::new(prior, base).unwrap(),
            hazard.map(|p| HazardSpec::new(p).unwrap()),
            Capacity::Unbounded,
            None,
            None,
        )
        .unwrap()
    }

    fn stream(seed: u64, n: usize) -> Vec<(DVector<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = dvector![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let y = dvector![0.7 * x[0] - 1.2 * x[1] + rng.random_range(-1.0..1.0)];
                (x, y)
            })
            .collect()
    }

    #[test]
    fn method_names_round_trip() {
        for s in ["C-Static", "RL-PR[inf]", "RL-PR[10]", "WoLF+RL-PR[5]", "RL-OUPR", "CPP-OU", "C-LSSM"] {
            assert_eq!(s.parse::<MethodName>().unwrap().to_string(), s);
        }
        assert!("C-Static[3]".parse::<MethodName>().unwrap_err().is_config());
        assert!("RL-PR[0]".parse::<MethodName>().is_err());
        assert!("Kalman".parse::<MethodName>().is_err());
    }

    #[test]
    fn config_requirements() {
        let spec = MeasurementSpec::linear_gaussian(2, FeatureMap::Identity, 0.5).unwrap();
        let base = GaussBelief::isotropic(DVector::zeros(2), 2.0).unwrap();
        let reset = PriorPolicy::new(PriorKind::RlPriorReset, base.clone()).unwrap();
        let err = MethodConfig::new(MethodKind::RlPr, spec.clone(), reset.clone(), None, Capacity::Unbounded, None, None);
        assert!(err.unwrap_err().is_config());
        let hazard = Some(HazardSpec::new(0.01).unwrap());
        let err = MethodConfig::new(MethodKind::WolfRlPr, spec.clone(), reset.clone(), hazard, Capacity::Unbounded, None, None);
        assert!(err.unwrap_err().is_config());
        let err = MethodConfig::new(MethodKind::CStatic, spec.clone(), reset, hazard, Capacity::Unbounded, None, None);
        assert!(err.unwrap_err().is_config());
        let bern = MeasurementSpec::bernoulli(2, FeatureMap::Identity).unwrap();
        let stat = PriorPolicy::new(PriorKind::Static, base).unwrap();
        let err = MethodConfig::new(MethodKind::CStatic, bern, stat, None, Capacity::Unbounded, Some(4.0), None);
        assert!(err.unwrap_err().is_config());
    }

    #[test]
    fn static_matches_sequential_conjugate_updates() {
        let cfg = linear_cfg(MethodKind::CStatic, PriorKind::Static, None);
        let mut state = AgentState::new(&cfg);
        let mut belief = cfg.policy.base.clone();
        let data = stream(1, 40);
        for (i, (x, y)) in data.iter().enumerate() {
            let next = data.get(i + 1).map(|(xn, _)| xn);
            let pred = bone_step(&mut state, &cfg, x, y, next).unwrap();
            belief = lg_update(&belief, &cfg.spec, x, y, None).unwrap().0;
            if let (Some(p), Some(xn)) = (pred, next) {
                assert_eq!(p.mean[0], belief.mean().dot(xn));
            }
        }
    }

    #[test]
    fn ou_at_one_is_static() {
        let a = linear_cfg(MethodKind::CStatic, PriorKind::Static, None);
        let b = linear_cfg(MethodKind::COu, PriorKind::Ou { gamma: 1.0 }, None);
        let (mut sa, mut sb) = (AgentState::new(&a), AgentState::new(&b));
        for (x, y) in stream(2, 60) {
            let pa = bone_step(&mut sa, &a, &x, &y, Some(&x)).unwrap().unwrap();
            let pb = bone_step(&mut sb, &b, &x, &y, Some(&x)).unwrap().unwrap();
            assert_eq!(pa.mean, pb.mean);
        }
    }

    #[test]
    fn oupr_with_unit_threshold_never_learns() {
        let cfg = linear_cfg(MethodKind::RlOupr, PriorKind::RlOupr { epsilon: 1.0 }, Some(0.1));
        let mut state = AgentState::new(&cfg);
        for (x, y) in stream(3, 50) {
            let pred = bone_step(&mut state, &cfg, &x, &y, Some(&x)).unwrap().unwrap();
            let one_step = lg_update(&cfg.policy.base, &cfg.spec, &x, &y, None).unwrap().0;
            assert_eq!(pred.mean[0], one_step.mean().dot(&x));
            assert_eq!(state.bank().modal().runlength, 0);
        }
    }

    #[test]
    fn tiny_hazard_tracks_static() {
        let a = linear_cfg(MethodKind::CStatic, PriorKind::Static, None);
        let b = linear_cfg(MethodKind::RlPr, PriorKind::RlPriorReset, Some(1e-12));
        let (mut sa, mut sb) = (AgentState::new(&a), AgentState::new(&b));
        for (x, y) in stream(4, 100) {
            let pa = bone_step(&mut sa, &a, &x, &y, Some(&x)).unwrap().unwrap();
            let pb = bone_step(&mut sb, &b, &x, &y, Some(&x)).unwrap().unwrap();
            assert!((pa.mean[0] - pb.mean[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn weighted_prediction_in_convex_hull() {
        let cfg = linear_cfg(MethodKind::RlPr, PriorKind::RlPriorReset, Some(0.2));
        let mut state = AgentState::new(&cfg);
        for (x, y) in stream(5, 30) {
            let p = bone_step(&mut state, &cfg, &x, &y, Some(&x)).unwrap().unwrap();
            let lo = p.per_hypothesis.iter().map(|(_, v)| v[0]).fold(f64::INFINITY, f64::min);
            let hi = p.per_hypothesis.iter().map(|(_, v)| v[0]).fold(f64::NEG_INFINITY, f64::max);
            assert!(p.mean[0] >= lo - 1e-12 && p.mean[0] <= hi + 1e-12);
            let total: f64 = p.per_hypothesis.iter().map(|(w, _)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_carry_hypothesis_index() {
        let cfg = linear_cfg(MethodKind::CStatic, PriorKind::Static, None);
        let mut state = AgentState::new(&cfg);
        let err = bone_step(&mut state, &cfg, &dvector![1.0], &dvector![1.0], None).unwrap_err();
        assert!(matches!(err, BoneError::Hypothesis { index: 0, .. }));
    }

    fn bandit_cfg() -> MethodConfig {
        let spec = MeasurementSpec::bernoulli(1, FeatureMap::Identity).unwrap();
        let base = GaussBelief::isotropic(dvector![0.0], 1.0).unwrap();
        MethodConfig::new(
            MethodKind::CStatic,
            spec,
            PriorPolicy::new(PriorKind::Static, base).unwrap(),
            None,
            Capacity::Unbounded,
            None,
            None,
        )
        .unwrap()
    }

    fn arm_with(cfg: &MethodConfig, mean: f64, var: f64) -> AgentState {
        let mut state = AgentState::new(cfg);
        let h = Hypothesis {
            runlength: 0,
            log_joint: LogWeight::ONE,
            belief: GaussBelief::new(dvector![mean], dmatrix![var]).unwrap(),
            anchor: None,
        };
        state.bank.set_single(h, 0);
        state
    }

    #[test]
    fn thompson_examples() {
        let cfg = bandit_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = dvector![1.0];
        assert_eq!(thompson_action(&[AgentState::new(&cfg)], &cfg, &x, &mut rng).unwrap(), 0);
        let arms = [arm_with(&cfg, 5.0, 1e-12), arm_with(&cfg, 0.0, 1e-12)];
        for _ in 0..1000 {
            assert_eq!(thompson_action(&arms, &cfg, &x, &mut rng).unwrap(), 0);
        }
        let arms = [arm_with(&cfg, 0.0, 1.0), arm_with(&cfg, 0.0, 1.0)];
        let picks = (0..10_000)
            .filter(|_| thompson_action(&arms, &cfg, &x, &mut rng).unwrap() == 0)
            .count();
        assert!((picks as f64 / 10_000.0 - 0.5).abs() < 0.02, "{picks}");
    }

    #[test]
    fn drift_only_touches_data_free_priors() {
        let cfg = linear_cfg(MethodKind::CAci, PriorKind::Aci { alpha: 0.5 }, None);
        let mut state = AgentState::new(&cfg);
        drift_only(&mut state, &cfg).unwrap();
        assert_eq!(state.bank().modal().belief.cov()[(0, 0)], 2.5);
        let cfg = linear_cfg(MethodKind::RlOupr, PriorKind::RlOupr { epsilon: 0.5 }, Some(0.1));
        let mut state = AgentState::new(&cfg);
        let before = state.clone();
        drift_only(&mut state, &cfg).unwrap();
        assert_eq!(state, before);
    }
}
