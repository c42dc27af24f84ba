//! Measurement models: the conditional mean `h(theta; x)`, its parameter Jacobian,
//! observation noise, and Gaussian (or moment-matched) predictive densities.
//!
//! Parameter layouts:
//! - linear / bernoulli: one weight per feature of `phi(x)`.
//! - categorical with `C` classes: `C - 1` blocks of feature weights, class-major;
//!   the last class has its logit pinned to zero.
//! - mlp: layer by layer, each layer contributes its weight matrix (row-major,
//!   `out x in`) followed by its bias vector. Hidden units use ReLU, the output is linear.
//! - segment-poly: `(a, b, c)` for `a + b*delta + c*delta^2`, `delta = x - anchor_x`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BoneError, Result};
use crate::numeric::{gaussian_log_pdf, symmetrize_psd, GaussBelief};

/// Basis expansion applied to the raw features before a linear or logit model.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `phi(x) = x`.
    Identity,
    /// `phi(x) = (1, x_1, ..., x_q)`.
    WithBias,
    /// Scalar input only: `phi(x) = (1, x, ..., x^degree)`.
    Poly { degree: usize },
}

impl FeatureMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Self::Identity => input_dim,
            Self::WithBias => input_dim + 1,
            Self::Poly { degree } => degree + 1,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Identity => x.clone(),
            Self::WithBias => DVector::from_iterator(
                x.len() + 1,
                std::iter::once(1.0).chain(x.iter().copied()),
            ),
            Self::Poly { degree } => {
                let v = x[0];
                DVector::from_iterator(degree + 1, (0..=*degree).map(|k| v.powi(k as i32)))
            }
        }
    }
}

/// Feed-forward ReLU network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl MlpArch {
    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend(&self.hidden);
        sizes.push(self.out_dim);
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// He-style random initialisation in the documented flat layout.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.layer_sizes().windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let sd = scale * (2.0 / n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                out.push(sd * rng.sample::<f64, _>(StandardNormal));
            }
            out.extend(std::iter::repeat_n(0.0, n_out));
        }
        DVector::from_vec(out)
    }

    /// Returns the network output and its `out_dim x param_count` Jacobian.
    fn forward_with_jacobian(&self, theta: &DVector<f64>, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let sizes = self.layer_sizes();
        let n_layers = sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let wmat = DMatrix::from_row_slice(n_out, n_in, &theta.as_slice()[offset..offset + n_in * n_out]);
            let bias = DVector::from_column_slice(&theta.as_slice()[offset + n_in * n_out..offset + n_in * n_out + n_out]);
            offsets.push(offset);
            weights.push((wmat, bias));
            offset += n_in * n_out + n_out;
        }

        // activations[l] is the input to layer l; pre[l] its pre-activation output
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        activations.push(x.clone());
        for (l, (wmat, bias)) in weights.iter().enumerate() {
            let z = wmat * &activations[l] + bias;
            let a = if l + 1 < n_layers { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        let output = activations[n_layers].clone();

        let mut jac = DMatrix::zeros(self.out_dim, self.param_count());
        for o in 0..self.out_dim {
            let mut delta = DVector::zeros(self.out_dim);
            delta[o] = 1.0;
            for l in (0..n_layers).rev() {
                let (wmat, _) = &weights[l];
                let input = &activations[l];
                let (n_out, n_in) = wmat.shape();
                let base = offsets[l];
                for i in 0..n_out {
                    for j in 0..n_in {
                        jac[(o, base + i * n_in + j)] = delta[i] * input[j];
                    }
                    jac[(o, base + n_in * n_out + i)] = delta[i];
                }
                if l > 0 {
                    let back = wmat.transpose() * &delta;
                    // ReLU derivative, taken as 0 at exactly 0
                    delta = back.zip_map(&pre[l - 1], |g, z| if z > 0.0 { g } else { 0.0 });
                }
            }
        }
        (output, jac)
    }
}

/// The likelihood family of a measurement model.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    LinearGaussian { features: FeatureMap },
    BernoulliLogit { features: FeatureMap },
    CategoricalSoftmax { classes: usize, features: FeatureMap },
    MlpGaussian { arch: MlpArch },
    SegmentPolyGaussian,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearGaussian { .. } => "linear-gaussian",
            Self::BernoulliLogit { .. } => "bernoulli-logit",
            Self::CategoricalSoftmax { .. } => "categorical-softmax",
            Self::MlpGaussian { .. } => "mlp-gaussian",
            Self::SegmentPolyGaussian => "segment-poly-gaussian",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(
            self,
            Self::LinearGaussian { .. } | Self::MlpGaussian { .. } | Self::SegmentPolyGaussian
        )
    }
}

/// Feature value recorded at the start of the current segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentAnchor {
    pub anchor_x: f64,
}

/// An immutable measurement model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    family: Family,
    input_dim: usize,
    obs_noise: Option<DMatrix<f64>>,
}

impl MeasurementSpec {
    pub fn new(family: Family, input_dim: usize, obs_noise: Option<DMatrix<f64>>) -> Result<Self> {
        if input_dim == 0 {
            return Err(BoneError::config("input_dim must be positive"));
        }
        let spec = Self {
            family,
            input_dim,
            obs_noise: None,
        };
        match &spec.family {
            Family::LinearGaussian { features }
            | Family::BernoulliLogit { features }
            | Family::CategoricalSoftmax { features, .. } => {
                if matches!(features, FeatureMap::Poly { .. }) && input_dim != 1 {
                    return Err(BoneError::config("polynomial features need a scalar input"));
                }
            }
            Family::MlpGaussian { arch } => {
                if arch.input_dim != input_dim || arch.out_dim == 0 || arch.hidden.contains(&0) {
                    return Err(BoneError::config(format!("inconsistent MLP architecture {arch:?}")));
                }
            }
            Family::SegmentPolyGaussian => {
                if input_dim != 1 {
                    return Err(BoneError::config("segment-poly needs a scalar input"));
                }
            }
        }
        if let Family::CategoricalSoftmax { classes, .. } = &spec.family {
            if *classes < 2 {
                return Err(BoneError::config("categorical model needs at least two classes"));
            }
        }
        let d = spec.out_dim();
        let obs_noise = match (spec.family.is_gaussian(), obs_noise) {
            (true, Some(r)) => {
                if r.shape() != (d, d) {
                    return Err(BoneError::config(format!(
                        "observation noise must be {d}x{d}, got {:?}",
                        r.shape()
                    )));
                }
                Some(symmetrize_psd(&r)?)
            }
            (true, None) => {
                return Err(BoneError::config(format!(
                    "{} family needs an observation noise matrix",
                    spec.family.name()
                )))
            }
            (false, Some(_)) => {
                return Err(BoneError::config(format!(
                    "{} family takes no observation noise",
                    spec.family.name()
                )))
            }
            (false, None) => None,
        };
        Ok(Self { obs_noise, ..spec })
    }

    /// Scalar linear-Gaussian regression with noise variance `noise_var`.
    pub fn linear_gaussian(input_dim: usize, features: FeatureMap, noise_var: f64) -> Result<Self> {
        Self::new(
            Family::LinearGaussian { features },
            input_dim,
            Some(DMatrix::from_element(1, 1, noise_var)),
        )
    }

    pub fn bernoulli(input_dim: usize, features: FeatureMap) -> Result<Self> {
        Self::new(Family::BernoulliLogit { features }, input_dim, None)
    }

    pub fn categorical(input_dim: usize, classes: usize, features: FeatureMap) -> Result<Self> {
        Self::new(Family::CategoricalSoftmax { classes, features }, input_dim, None)
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, out_dim: usize, obs_noise: DMatrix<f64>) -> Result<Self> {
        let arch = MlpArch {
            input_dim,
            hidden,
            out_dim,
        };
        Self::new(Family::MlpGaussian { arch }, input_dim, Some(obs_noise))
    }

    pub fn segment_poly(noise_var: f64) -> Result<Self> {
        Self::new(Family::SegmentPolyGaussian, 1, Some(DMatrix::from_element(1, 1, noise_var)))
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn obs_noise(&self) -> Option<&DMatrix<f64>> {
        self.obs_noise.as_ref()
    }

    /// Returns a copy with the observation noise replaced (Gaussian families only).
    pub fn with_obs_noise(&self, noise: DMatrix<f64>) -> Result<Self> {
        Self::new(self.family.clone(), self.input_dim, Some(noise))
    }

    /// Dimension `d` of `h(theta; x)`.
    pub fn out_dim(&self) -> usize {
        match &self.family {
            Family::LinearGaussian { .. } | Family::BernoulliLogit { .. } | Family::SegmentPolyGaussian => 1,
            Family::CategoricalSoftmax { classes, .. } => *classes,
            Family::MlpGaussian { arch } => arch.out_dim,
        }
    }

    /// Number of model parameters `m`.
    pub fn param_count(&self) -> usize {
        match &self.family {
            Family::LinearGaussian { features } | Family::BernoulliLogit { features } => {
                features.output_dim(self.input_dim)
            }
            Family::CategoricalSoftmax { classes, features } => (classes - 1) * features.output_dim(self.input_dim),
            Family::MlpGaussian { arch } => arch.param_count(),
            Family::SegmentPolyGaussian => 3,
        }
    }

    pub fn needs_anchor(&self) -> bool {
        matches!(self.family, Family::SegmentPolyGaussian)
    }

    fn check_inputs(&self, theta: &DVector<f64>, x: &DVector<f64>, anchor: Option<&SegmentAnchor>) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(BoneError::contract(format!(
                "{}: parameter vector has length {}, expected {}",
                self.family.name(),
                theta.len(),
                self.param_count()
            )));
        }
        if x.len() != self.input_dim {
            return Err(BoneError::contract(format!(
                "{}: feature vector has length {}, expected {}",
                self.family.name(),
                x.len(),
                self.input_dim
            )));
        }
        if self.needs_anchor() != anchor.is_some() {
            return Err(BoneError::contract(format!(
                "{}: segment anchor must be supplied iff the family is segment-poly",
                self.family.name()
            )));
        }
        Ok(())
    }

    /// Free logits `eta` for the exponential-family models.
    pub fn natural_params(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_inputs(theta, x, None)?;
        match &self.family {
            Family::BernoulliLogit { features } => Ok(DVector::from_element(1, theta.dot(&features.apply(x)))),
            Family::CategoricalSoftmax { classes, features } => {
                let phi = features.apply(x);
                let p = phi.len();
                Ok(DVector::from_fn(classes - 1, |k, _| theta.rows(k * p, p).dot(&phi)))
            }
            other => Err(BoneError::UnsupportedFamily {
                op: "natural_params",
                family: other.name(),
            }),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli variance `p (1 - p)`, falling back to `sigma(z) sigma(-z)` once `p` rounds to 0 or 1.
fn bernoulli_variance(z: f64, p: f64) -> f64 {
    let r = p * (1.0 - p);
    if r > 0.0 {
        r
    } else {
        (sigmoid(z) * sigmoid(-z)).max(f64::MIN_POSITIVE)
    }
}

fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn softmax_with_pinned_last(eta: &DVector<f64>) -> DVector<f64> {
    let c = eta.len() + 1;
    let max = eta.iter().copied().fold(0.0f64, f64::max);
    let exps = DVector::from_fn(c, |k, _| if k + 1 < c { (eta[k] - max).exp() } else { (-max).exp() });
    let total = exps.sum();
    exps / total
}

/// Evaluates `h(theta; x)` and its Jacobian with respect to `theta`.
pub fn apply_h(
    spec: &MeasurementSpec,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    spec.check_inputs(theta, x, anchor)?;
    match spec.family() {
        Family::LinearGaussian { features } => {
            let phi = features.apply(x);
            Ok((DVector::from_element(1, theta.dot(&phi)), row(&phi)))
        }
        Family::BernoulliLogit { features } => {
            let phi = features.apply(x);
            let z = theta.dot(&phi);
            let p = sigmoid(z);
            Ok((DVector::from_element(1, p), row(&phi) * bernoulli_variance(z, p)))
        }
        Family::CategoricalSoftmax { classes, features } => {
            let phi = features.apply(x);
            let nf = phi.len();
            let eta = spec.natural_params(theta, x)?;
            let probs = softmax_with_pinned_last(&eta);
            let mut jac = DMatrix::zeros(*classes, spec.param_count());
            for i in 0..*classes {
                for k in 0..classes - 1 {
                    let coeff = probs[i] * (if i == k { 1.0 } else { 0.0 } - probs[k]);
                    for j in 0..nf {
                        jac[(i, k * nf + j)] = coeff * phi[j];
                    }
                }
            }
            Ok((probs, jac))
        }
        Family::MlpGaussian { arch } => Ok(arch.forward_with_jacobian(theta, x)),
        Family::SegmentPolyGaussian => {
            let delta = x[0] - anchor.expect("checked above").anchor_x;
            let basis = DVector::from_vec(vec![1.0, delta, delta * delta]);
            Ok((DVector::from_element(1, theta.dot(&basis)), row(&basis)))
        }
    }
}

/// Mean and covariance of the sufficient statistic: first and second derivatives of
/// the log-partition at the free logits `eta`.
pub fn expfam_moments(spec: &MeasurementSpec, eta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match spec.family() {
        Family::BernoulliLogit { .. } => {
            if eta.len() != 1 {
                return Err(BoneError::contract("bernoulli natural parameter must be scalar"));
            }
            let p = sigmoid(eta[0]);
            Ok((DVector::from_element(1, p), DMatrix::from_element(1, 1, bernoulli_variance(eta[0], p))))
        }
        Family::CategoricalSoftmax { classes, .. } => {
            if eta.len() != classes - 1 {
                return Err(BoneError::contract(format!(
                    "categorical model with {classes} classes takes {} free logits",
                    classes - 1
                )));
            }
            let probs = softmax_with_pinned_last(eta);
            let free = probs.rows(0, classes - 1).into_owned();
            let r = DMatrix::from_diagonal(&free) - &free * free.transpose();
            Ok((probs, r))
        }
        other => Err(BoneError::UnsupportedFamily {
            op: "expfam_moments",
            family: other.name(),
        }),
    }
}

/// A local linear-Gaussian observation model around a parameter value, expressed in
/// the coordinates used by the update (the free coordinates for categorical models).
#[derive(Debug, Clone)]
pub struct Linearization {
    /// Observation in update coordinates.
    pub y: DVector<f64>,
    /// Predicted observation `h(theta; x)` in update coordinates.
    pub yhat: DVector<f64>,
    /// Jacobian `H` in update coordinates.
    pub jac: DMatrix<f64>,
    /// Observation covariance: `R` for Gaussian families, the moment-matched `R(eta)` otherwise.
    pub noise: DMatrix<f64>,
}

/// Linearises the model at `theta` and maps `y` into update coordinates.
pub fn linearize(
    spec: &MeasurementSpec,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<Linearization> {
    if y.len() != spec.out_dim() {
        return Err(BoneError::contract(format!(
            "{}: observation has length {}, expected {}",
            spec.family().name(),
            y.len(),
            spec.out_dim()
        )));
    }
    let (yhat, jac) = apply_h(spec, theta, x, anchor)?;
    match spec.family() {
        Family::BernoulliLogit { .. } => {
            let eta = spec.natural_params(theta, x)?;
            let (_, noise) = expfam_moments(spec, &eta)?;
            Ok(Linearization {
                y: y.clone(),
                yhat,
                jac,
                noise,
            })
        }
        Family::CategoricalSoftmax { classes, .. } => {
            let free = classes - 1;
            let eta = spec.natural_params(theta, x)?;
            let (_, noise) = expfam_moments(spec, &eta)?;
            Ok(Linearization {
                y: y.rows(0, free).into_owned(),
                yhat: yhat.rows(0, free).into_owned(),
                jac: jac.rows(0, free).into_owned(),
                noise,
            })
        }
        _ => Ok(Linearization {
            y: y.clone(),
            yhat,
            jac,
            noise: spec.obs_noise().expect("gaussian families carry R").clone(),
        }),
    }
}

/// `log p(y | x, prior)` under linearisation at the prior mean:
/// `log N(y | h(mu; x), H Sigma H^T + R)`.
pub fn predictive_log_density(
    spec: &MeasurementSpec,
    prior: &GaussBelief,
    x: &DVector<f64>,
    y: &DVector<f64>,
    anchor: Option<&SegmentAnchor>,
) -> Result<f64> {
    let lin = linearize(spec, prior.mean(), x, y, anchor)?;
    predictive_log_density_from(&lin, prior.cov())
}

pub(crate) fn predictive_log_density_from(lin: &Linearization, cov: &DMatrix<f64>) -> Result<f64> {
    let s = &lin.jac * cov * lin.jac.transpose() + &lin.noise;
    gaussian_log_pdf(&lin.y, &lin.yhat, &s)
}
