//! Seeded synthetic streams for the benchmark experiments.
//!
//! Each generator is a pure function of its parameters and seed.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{BoneError, Result};
use crate::measurement::sigmoid;

/// One observation `(x_t, y_t)` with whatever ground truth the generator knows.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub true_theta: Option<DVector<f64>>,
    pub is_changepoint: Option<bool>,
    /// Success probability of every arm (bandit streams only).
    pub arm_probs: Option<DVector<f64>>,
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..=hi))
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Binary classification whose parameter rotates by 5 degrees per step:
/// `theta_t = 10 (sin(t pi/36), cos(t pi/36))`, `x ~ U[-3,3]^2`, `y ~ Bern(sigma(theta^T x))`.
pub fn gen_periodic_drift(horizon: usize, seed: u64) -> Vec<StreamRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|t| {
            let angle = t as f64 * PI / 36.0;
            let theta = DVector::from_vec(vec![10.0 * angle.sin(), 10.0 * angle.cos()]);
            let x = uniform_vec(&mut rng, 2, -3.0, 3.0);
            let y = bernoulli(&mut rng, sigmoid(theta.dot(&x)));
            StreamRecord {
                t,
                x,
                y: DVector::from_element(1, y),
                true_theta: Some(theta),
                is_changepoint: None,
                arm_probs: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftJumpsParams {
    pub jump_prob: f64,
    pub drift_sd: f64,
    /// Half-width of the feature box `U[-w, w]^2`.
    pub feature_range: f64,
}

impl Default for DriftJumpsParams {
    fn default() -> Self {
        Self {
            jump_prob: 0.01,
            drift_sd: 0.01,
            feature_range: 3.0,
        }
    }
}

/// Binary classification with a slowly drifting parameter that occasionally jumps
/// to a fresh `U[-2,2]^2` value.
pub fn gen_drift_jumps(horizon: usize, seed: u64, params: &DriftJumpsParams) -> Result<Vec<StreamRecord>> {
    check_prob("jump_prob", params.jump_prob)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = uniform_vec(&mut rng, 2, -2.0, 2.0);
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut jumped = false;
        if t > 0 {
            if rng.random::<f64>() < params.jump_prob {
                theta = uniform_vec(&mut rng, 2, -2.0, 2.0);
                jumped = true;
            } else {
                for v in theta.iter_mut() {
                    *v += params.drift_sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let x = uniform_vec(&mut rng, 2, -params.feature_range, params.feature_range);
        let y = bernoulli(&mut rng, sigmoid(theta.dot(&x)));
        out.push(StreamRecord {
            t,
            x,
            y: DVector::from_element(1, y),
            true_theta: Some(theta.clone()),
            is_changepoint: Some(jumped),
            arm_probs: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTailParams {
    pub jump_prob: f64,
    pub dof: f64,
    pub scale: f64,
}

impl Default for HeavyTailParams {
    fn default() -> Self {
        Self {
            jump_prob: 0.01,
            dof: 2.01,
            scale: 1.0,
        }
    }
}

/// Student-t draw as `z / sqrt(chi2_nu / nu)`.
pub fn student_t<R: Rng + ?Sized>(rng: &mut R, chi: &ChiSquared<f64>, dof: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let c = chi.sample(rng);
    z / (c / dof).sqrt()
}

/// Piecewise quadratic regression `y = (1, x, x^2)^T theta + t_nu` with
/// `x ~ U[-2,2]`; theta starts and jumps to `U[-3,3]^3`.
pub fn gen_heavy_tail(horizon: usize, seed: u64, params: &HeavyTailParams) -> Result<Vec<StreamRecord>> {
    check_prob("jump_prob", params.jump_prob)?;
    let chi = ChiSquared::new(params.dof)
        .map_err(|e| BoneError::config(format!("invalid degrees of freedom {}: {e}", params.dof)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = uniform_vec(&mut rng, 3, -3.0, 3.0);
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let jumped = t > 0 && rng.random::<f64>() < params.jump_prob;
        if jumped {
            theta = uniform_vec(&mut rng, 3, -3.0, 3.0);
        }
        let x: f64 = rng.random_range(-2.0..=2.0);
        let mean = theta[0] + theta[1] * x + theta[2] * x * x;
        let y = mean + params.scale * student_t(&mut rng, &chi, params.dof);
        out.push(StreamRecord {
            t,
            x: DVector::from_element(1, x),
            y: DVector::from_element(1, y),
            true_theta: Some(theta.clone()),
            is_changepoint: Some(jumped),
            arm_probs: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditParams {
    pub arms: usize,
    pub step_sd: f64,
}

impl Default for BanditParams {
    fn default() -> Self {
        Self { arms: 10, step_sd: 0.03 }
    }
}

/// Arm success probabilities following independent random walks clipped to `[0, 1]`.
/// Features are the constant `[1]`; rewards are drawn by the harness for the pulled arm.
pub fn gen_bandit_stream(horizon: usize, seed: u64, params: &BanditParams) -> Result<Vec<StreamRecord>> {
    if params.arms == 0 {
        return Err(BoneError::config("a bandit needs at least one arm"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = uniform_vec(&mut rng, params.arms, 0.0, 1.0);
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            for p in probs.iter_mut() {
                *p = (*p + params.step_sd * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
            }
        }
        out.push(StreamRecord {
            t,
            x: DVector::from_element(1, 1.0),
            y: DVector::zeros(0),
            true_theta: None,
            is_changepoint: None,
            arm_probs: Some(probs.clone()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependentSegmentsParams {
    pub hazard: f64,
    pub noise_sd: f64,
    /// New linear and quadratic coefficients are drawn from `U[-c, c]`.
    pub coef_range: f64,
    /// The grid spans `[0, x_max]`.
    pub x_max: f64,
}

impl Default for DependentSegmentsParams {
    fn default() -> Self {
        Self {
            hazard: 0.01,
            noise_sd: 0.1,
            coef_range: 1.0,
            x_max: 10.0,
        }
    }
}

/// Value of `a + b d + c d^2` at `d = x - anchor`.
pub fn segment_curve(coef: &DVector<f64>, anchor: f64, x: f64) -> f64 {
    let d = x - anchor;
    coef[0] + coef[1] * d + coef[2] * d * d
}

/// Piecewise quadratics on a uniform grid, continuous at every segment boundary.
/// `true_theta` holds the current segment's `(a, b, c)` relative to its first grid point.
pub fn gen_dependent_segments(horizon: usize, seed: u64, params: &DependentSegmentsParams) -> Result<Vec<StreamRecord>> {
    check_prob("hazard", params.hazard)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = params.coef_range;
    let grid = |t: usize| {
        if horizon <= 1 {
            0.0
        } else {
            params.x_max * t as f64 / (horizon - 1) as f64
        }
    };
    let mut coef = uniform_vec(&mut rng, 3, -c, c);
    let mut anchor = grid(0);
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let x = grid(t);
        let jumped = t > 0 && rng.random::<f64>() < params.hazard;
        if jumped {
            let start = segment_curve(&coef, anchor, x);
            coef = DVector::from_vec(vec![start, rng.random_range(-c..=c), rng.random_range(-c..=c)]);
            anchor = x;
        }
        let y = segment_curve(&coef, anchor, x) + params.noise_sd * rng.sample::<f64, _>(StandardNormal);
        out.push(StreamRecord {
            t,
            x: DVector::from_element(1, x),
            y: DVector::from_element(1, y),
            true_theta: Some(coef.clone()),
            is_changepoint: Some(jumped),
            arm_probs: None,
        });
    }
    Ok(out)
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(BoneError::config(format!("{name} must lie in [0, 1], got {p}")))
    }
}
