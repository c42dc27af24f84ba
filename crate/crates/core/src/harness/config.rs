//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agents::{CppSettings, MethodConfig, MethodName};
use crate::datagen::{BanditParams, DependentSegmentsParams, DriftJumpsParams, HeavyTailParams};
use crate::error::{BoneError, Result};
use crate::measurement::{FeatureMap, Family, MeasurementSpec, MlpArch};
use crate::numeric::{GaussBelief, LinearDynamics};
use crate::priors::{PriorKind, PriorPolicy};
use crate::rng::{rng_for, stream};
use crate::weighting::{Capacity, HazardSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PeriodicDrift,
    DriftJumps,
    HeavyTail,
    Bandit,
    DependentSegments,
    CsvStream,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PeriodicDrift => "periodic-drift",
            Self::DriftJumps => "drift-jumps",
            Self::HeavyTail => "heavy-tail",
            Self::Bandit => "bandit",
            Self::DependentSegments => "dependent-segments",
            Self::CsvStream => "csv-stream",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = BoneError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| BoneError::config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSection {
    Identity {},
    WithBias {},
    Poly { degree: usize },
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self::Identity {}
    }
}

impl From<&FeatureSection> for FeatureMap {
    fn from(f: &FeatureSection) -> Self {
        match f {
            FeatureSection::Identity {} => FeatureMap::Identity,
            FeatureSection::WithBias {} => FeatureMap::WithBias,
            FeatureSection::Poly { degree } => FeatureMap::Poly { degree: *degree },
        }
    }
}

fn one() -> usize {
    1
}

/// Measurement model. `obs_noise` is the variance `r` in `R = r I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSection {
    LinearGaussian {
        input_dim: usize,
        #[serde(default)]
        features: FeatureSection,
        obs_noise: f64,
    },
    BernoulliLogit {
        input_dim: usize,
        #[serde(default)]
        features: FeatureSection,
    },
    CategoricalSoftmax {
        input_dim: usize,
        classes: usize,
        #[serde(default)]
        features: FeatureSection,
    },
    MlpGaussian {
        input_dim: usize,
        hidden: Vec<usize>,
        #[serde(default = "one")]
        out_dim: usize,
        obs_noise: f64,
    },
    SegmentPolyGaussian {
        obs_noise: f64,
    },
}

impl ModelSection {
    pub fn build(&self) -> Result<MeasurementSpec> {
        let noise = |d: usize, r: f64| {
            if r > 0.0 && r.is_finite() {
                Ok(DMatrix::identity(d, d) * r)
            } else {
                Err(BoneError::config(format!("obs_noise must be positive, got {r}")))
            }
        };
        match self {
            Self::LinearGaussian {
                input_dim,
                features,
                obs_noise,
            } => MeasurementSpec::new(
                Family::LinearGaussian {
                    features: features.into(),
                },
                *input_dim,
                Some(noise(1, *obs_noise)?),
            ),
            Self::BernoulliLogit { input_dim, features } => MeasurementSpec::bernoulli(*input_dim, features.into()),
            Self::CategoricalSoftmax {
                input_dim,
                classes,
                features,
            } => MeasurementSpec::categorical(*input_dim, *classes, features.into()),
            Self::MlpGaussian {
                input_dim,
                hidden,
                out_dim,
                obs_noise,
            } => MeasurementSpec::new(
                Family::MlpGaussian {
                    arch: MlpArch {
                        input_dim: *input_dim,
                        hidden: hidden.clone(),
                        out_dim: *out_dim,
                    },
                },
                *input_dim,
                Some(noise(*out_dim, *obs_noise)?),
            ),
            Self::SegmentPolyGaussian { obs_noise } => MeasurementSpec::segment_poly(noise(1, *obs_noise)?[(0, 0)]),
        }
    }

    fn obs_noise_mut(&mut self) -> Option<&mut f64> {
        match self {
            Self::LinearGaussian { obs_noise, .. }
            | Self::MlpGaussian { obs_noise, .. }
            | Self::SegmentPolyGaussian { obs_noise } => Some(obs_noise),
            _ => None,
        }
    }
}

fn default_var() -> f64 {
    1.0
}

/// Base prior `(mu_0, Sigma_0)`. Without `mean`, the mean is zero, except for MLPs
/// whose mean is a random initialisation scaled by `init_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default = "default_var")]
    pub var: f64,
    #[serde(default)]
    pub cov_diag: Option<Vec<f64>>,
    #[serde(default)]
    pub init_scale: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            mean: None,
            var: 1.0,
            cov_diag: None,
            init_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySection {
    Static {},
    Ou {
        gamma: f64,
    },
    Aci {
        alpha: f64,
    },
    ShrinkPerturb {
        shrink: f64,
        #[serde(default)]
        perturb: Option<f64>,
    },
    Lssm {
        /// Rows of `F`.
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        bias: Option<Vec<f64>>,
        /// Isotropic process noise variance `q` in `Q = q I`.
        noise: f64,
    },
    CppOu {},
    RlPriorReset {},
    RlMmpr {},
    RlOupr {
        epsilon: f64,
    },
}

impl PolicySection {
    fn build(&self, m: usize) -> Result<PriorKind> {
        Ok(match self {
            Self::Static {} => PriorKind::Static,
            Self::Ou { gamma } => PriorKind::Ou { gamma: *gamma },
            Self::Aci { alpha } => PriorKind::Aci { alpha: *alpha },
            Self::ShrinkPerturb { shrink, perturb } => PriorKind::ShrinkPerturb {
                shrink: *shrink,
                perturb: *perturb,
            },
            Self::Lssm { transition, bias, noise } => {
                if transition.len() != m || transition.iter().any(|r| r.len() != m) {
                    return Err(BoneError::config(format!("lssm transition must be {m}x{m}")));
                }
                let f = DMatrix::from_fn(m, m, |i, j| transition[i][j]);
                let b = match bias {
                    Some(b) if b.len() == m => DVector::from_column_slice(b),
                    Some(b) => return Err(BoneError::config(format!("lssm bias has length {}, expected {m}", b.len()))),
                    None => DVector::zeros(m),
                };
                if !(*noise >= 0.0) {
                    return Err(BoneError::config("lssm noise must be non-negative"));
                }
                PriorKind::Lssm {
                    dynamics: LinearDynamics::new(f, b, DMatrix::identity(m, m) * *noise)
                        .map_err(|e| BoneError::config(e.to_string()))?,
                }
            }
            Self::CppOu {} => PriorKind::CppOu,
            Self::RlPriorReset {} => PriorKind::RlPriorReset,
            Self::RlMmpr {} => PriorKind::RlMmpr,
            Self::RlOupr { epsilon } => PriorKind::RlOupr { epsilon: *epsilon },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CppSection {
    #[serde(default = "default_cpp_steps")]
    pub steps: usize,
    #[serde(default = "default_cpp_lr")]
    pub lr: f64,
}

fn default_cpp_steps() -> usize {
    CppSettings::default().steps
}

fn default_cpp_lr() -> f64 {
    CppSettings::default().lr
}

impl Default for CppSection {
    fn default() -> Self {
        Self {
            steps: default_cpp_steps(),
            lr: default_cpp_lr(),
        }
    }
}

/// The `method` stanza.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    /// e.g. `RL-PR[10]`, `WoLF+RL-PR`, `C-ACI`.
    pub name: String,
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub hazard: Option<f64>,
    /// Bank capacity; overrides a `[K]` suffix in the name.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub wolf_c: Option<f64>,
    #[serde(default)]
    pub cpp: Option<CppSection>,
}

impl MethodSection {
    fn parsed_name(&self) -> Result<MethodName> {
        let mut name: MethodName = self.name.parse()?;
        if let Some(k) = self.k {
            if !name.kind.is_runlength_bank() {
                return Err(BoneError::config(format!("method `{}` takes no bank capacity", self.name)));
            }
            if k == 0 {
                return Err(BoneError::config("k must be at least 1"));
            }
            name.capacity = Some(Capacity::Bounded(k));
        }
        Ok(name)
    }

    /// Display name with the effective capacity.
    pub fn display_name(&self) -> Result<String> {
        let mut name = self.parsed_name()?;
        if name.kind.is_runlength_bank() && name.capacity.is_none() {
            name.capacity = Some(Capacity::Unbounded);
        }
        Ok(name.to_string())
    }

    /// Builds the method; `init_seed` feeds random MLP initialisation.
    pub fn build(&self, init_seed: u64) -> Result<MethodConfig> {
        let name = self.parsed_name()?;
        let spec = self.model.build()?;
        let m = spec.param_count();
        let mean = match (&self.prior.mean, spec.family()) {
            (Some(mu), _) if mu.len() == m => DVector::from_column_slice(mu),
            (Some(mu), _) => {
                return Err(BoneError::config(format!("prior mean has length {}, expected {m}", mu.len())))
            }
            (None, Family::MlpGaussian { arch }) => {
                let mut rng = rng_for(init_seed, &[stream::INIT]);
                arch.init_params(&mut rng, self.prior.init_scale.unwrap_or(1.0))
            }
            (None, _) => DVector::zeros(m),
        };
        let cov = match &self.prior.cov_diag {
            Some(d) if d.len() == m => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Some(d) => return Err(BoneError::config(format!("prior cov_diag has length {}, expected {m}", d.len()))),
            None => DMatrix::identity(m, m) * self.prior.var,
        };
        if cov.diagonal().iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BoneError::config("prior variances must be positive"));
        }
        let base = GaussBelief::new(mean, cov).map_err(|e| BoneError::config(e.to_string()))?;
        let policy = PriorPolicy::new(self.policy.build(m)?, base)?;
        let hazard = self.hazard.map(HazardSpec::new).transpose()?;
        let cpp = self.cpp.map(|c| CppSettings { steps: c.steps, lr: c.lr });
        MethodConfig::new(
            name.kind,
            spec,
            policy,
            hazard,
            name.capacity.unwrap_or(Capacity::Unbounded),
            self.wolf_c,
            cpp,
        )
    }
}

/// Generator options and csv-stream ingestion. Only the fields relevant to the
/// selected experiment are read; unset ones take the generator defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub jump_prob: Option<f64>,
    #[serde(default)]
    pub drift_sd: Option<f64>,
    #[serde(default)]
    pub feature_range: Option<f64>,
    #[serde(default)]
    pub dof: Option<f64>,
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub arms: Option<usize>,
    #[serde(default)]
    pub step_sd: Option<f64>,
    #[serde(default)]
    pub segment_hazard: Option<f64>,
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default)]
    pub coef_range: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub csv_path: Option<String>,
    #[serde(default)]
    pub ewma_half_life: Option<f64>,
    /// Whether unpulled bandit arms still receive the data-free prior step.
    #[serde(default)]
    pub drift_unpulled: Option<bool>,
}

impl DataSection {
    pub fn drift_jumps(&self) -> DriftJumpsParams {
        let d = DriftJumpsParams::default();
        DriftJumpsParams {
            jump_prob: self.jump_prob.unwrap_or(d.jump_prob),
            drift_sd: self.drift_sd.unwrap_or(d.drift_sd),
            feature_range: self.feature_range.unwrap_or(d.feature_range),
        }
    }

    pub fn heavy_tail(&self) -> HeavyTailParams {
        let d = HeavyTailParams::default();
        HeavyTailParams {
            jump_prob: self.jump_prob.unwrap_or(d.jump_prob),
            dof: self.dof.unwrap_or(d.dof),
            scale: self.noise_scale.unwrap_or(d.scale),
        }
    }

    pub fn bandit(&self) -> BanditParams {
        let d = BanditParams::default();
        BanditParams {
            arms: self.arms.unwrap_or(d.arms),
            step_sd: self.step_sd.unwrap_or(d.step_sd),
        }
    }

    pub fn dependent_segments(&self) -> DependentSegmentsParams {
        let d = DependentSegmentsParams::default();
        DependentSegmentsParams {
            hazard: self.segment_hazard.unwrap_or(d.hazard),
            noise_sd: self.noise_sd.unwrap_or(d.noise_sd),
            coef_range: self.coef_range.unwrap_or(d.coef_range),
            x_max: self.x_max.unwrap_or(d.x_max),
        }
    }
}

/// Hyperparameter grid evaluated on a warmup prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Prefix length used for every grid point; defaults to the full horizon.
    #[serde(default)]
    pub warmup: Option<usize>,
    pub grid: BTreeMap<String, Vec<f64>>,
}

fn default_window() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub method: MethodSection,
    #[serde(default = "one")]
    pub trials: usize,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_path: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default = "default_window")]
    pub rolling_window: usize,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Also write the runlength posterior of the first trial.
    #[serde(default)]
    pub record_runlength: bool,
    #[serde(default)]
    pub psd_tol: Option<f64>,
}

/// Hyperparameters a sweep grid may name.
pub const SWEEP_KEYS: &[&str] = &[
    "hazard",
    "k",
    "wolf_c",
    "cpp.lr",
    "cpp.steps",
    "policy.gamma",
    "policy.alpha",
    "policy.shrink",
    "policy.epsilon",
    "obs_noise",
];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| BoneError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| BoneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(BoneError::config("trials must be at least 1"));
        }
        if self.rolling_window == 0 {
            return Err(BoneError::config("rolling_window must be at least 1"));
        }
        if let Some(tol) = self.psd_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(BoneError::config("psd_tol must be positive"));
            }
        }
        self.method.build(self.seed)?;
        if self.experiment == ExperimentKind::CsvStream && self.data.csv_path.is_none() {
            return Err(BoneError::config("csv-stream needs data.csv_path"));
        }
        if let Some(h) = self.data.ewma_half_life {
            if !(h > 0.0) {
                return Err(BoneError::config("ewma_half_life must be positive"));
            }
        }
        if let Some(sweep) = &self.sweep {
            for (key, values) in &sweep.grid {
                if !SWEEP_KEYS.contains(&key.as_str()) {
                    return Err(BoneError::config(format!(
                        "unknown sweep key `{key}`; allowed: {}",
                        SWEEP_KEYS.join(", ")
                    )));
                }
                if values.is_empty() {
                    return Err(BoneError::config(format!("sweep key `{key}` has no values")));
                }
                for v in values {
                    self.with_override(key, *v)?;
                }
            }
        }
        Ok(())
    }

    /// Copy of the config with one named hyperparameter replaced.
    pub fn with_override(&self, key: &str, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let m = &mut cfg.method;
        let mismatch = || BoneError::config(format!("sweep key `{key}` does not apply to method `{}`", self.method.name));
        let as_count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(BoneError::config(format!("sweep key `{key}` needs a positive integer, got {v}")))
            }
        };
        match key {
            "hazard" => m.hazard = Some(value),
            "k" => m.k = Some(as_count(value)?),
            "wolf_c" => m.wolf_c = Some(value),
            "cpp.lr" => m.cpp.get_or_insert_with(CppSection::default).lr = value,
            "cpp.steps" => m.cpp.get_or_insert_with(CppSection::default).steps = as_count(value)?,
            "policy.gamma" => match &mut m.policy {
                PolicySection::Ou { gamma } => *gamma = value,
                _ => return Err(mismatch()),
            },
            "policy.alpha" => match &mut m.policy {
                PolicySection::Aci { alpha } => *alpha = value,
                _ => return Err(mismatch()),
            },
            "policy.shrink" => match &mut m.policy {
                PolicySection::ShrinkPerturb { shrink, .. } => *shrink = value,
                _ => return Err(mismatch()),
            },
            "policy.epsilon" => match &mut m.policy {
                PolicySection::RlOupr { epsilon } => *epsilon = value,
                _ => return Err(mismatch()),
            },
            "obs_noise" => *m.model.obs_noise_mut().ok_or_else(mismatch)? = value,
            other => return Err(BoneError::config(format!("unknown sweep key `{other}`"))),
        }
        cfg.method.build(cfg.seed)?;
        Ok(cfg)
    }
}
