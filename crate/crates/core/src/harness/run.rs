//! Prequential and bandit experiment loops.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::agents::{bone_step, drift_only, predict, thompson_action, AgentState, MethodConfig};
use crate::datagen::{gen_bandit_stream, gen_dependent_segments, gen_drift_jumps, gen_heavy_tail, gen_periodic_drift, StreamRecord};
use crate::error::{BoneError, Result};
use crate::measurement::Family;
use crate::numeric::set_psd_tolerance;
use crate::rng::{derive_seed, rng_for, stream};

use super::config::{ExperimentConfig, ExperimentKind};
use super::ingest::read_csv_stream;
use super::metrics::{compute_metrics, LossKind, MetricTrace, Summary};

/// `(t, r, log p(r_t | y_{1:t}))` rows.
pub type RunlengthRows = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    /// Seed the trial's data stream was generated from.
    pub data_seed: u64,
    pub trace: MetricTrace,
    pub summary: Summary,
    pub runlength: Option<RunlengthRows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads for trials; `None` or 1 runs sequentially.
    pub parallel: Option<usize>,
}

fn step_err(trial: usize, step: usize) -> impl Fn(BoneError) -> BoneError {
    move |e| BoneError::Step {
        trial,
        step,
        source: Box::new(e),
    }
}

fn loss_kind(cfg: &MethodConfig) -> LossKind {
    match cfg.spec.family() {
        Family::BernoulliLogit { .. } | Family::CategoricalSoftmax { .. } => LossKind::Classification,
        _ => LossKind::Regression,
    }
}

/// Argmax with ties to the lowest index; a scalar Bernoulli output `p` is read as `[1-p, p]`.
fn predicted_class(probs: &DVector<f64>) -> usize {
    if probs.len() == 1 {
        return usize::from(probs[0] > 0.5);
    }
    let mut best = 0;
    for k in 1..probs.len() {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    best
}

/// Maps a raw target to the observation vector the model expects: class indices
/// become one-hot vectors for categorical models.
fn observation_for(cfg: &MethodConfig, y: &DVector<f64>) -> Result<DVector<f64>> {
    match cfg.spec.family() {
        Family::CategoricalSoftmax { classes, .. } if y.len() == 1 => {
            let c = y[0];
            if c < 0.0 || c.fract() != 0.0 || c as usize >= *classes {
                return Err(BoneError::contract(format!("class label {c} outside 0..{classes}")));
            }
            let mut one_hot = DVector::zeros(*classes);
            one_hot[c as usize] = 1.0;
            Ok(one_hot)
        }
        Family::BernoulliLogit { .. } if !(y.len() == 1 && (y[0] == 0.0 || y[0] == 1.0)) => {
            Err(BoneError::contract(format!("bernoulli target must be 0 or 1, got {y}")))
        }
        _ => Ok(y.clone()),
    }
}

/// Runs one agent over `records`: predict from `x_t`, score against `y_t`, then update.
pub fn run_stream(
    cfg: &MethodConfig,
    records: &[StreamRecord],
    window: usize,
    record_runlength: bool,
    trial: usize,
) -> Result<(MetricTrace, Option<RunlengthRows>)> {
    let kind = loss_kind(cfg);
    let mut trace = MetricTrace::new(kind, window);
    let mut rows = record_runlength.then(Vec::new);
    let mut state = AgentState::new(cfg);
    for rec in records {
        let err = step_err(trial, rec.t);
        let y = observation_for(cfg, &rec.y).map_err(&err)?;
        let prediction = predict(&state, cfg, &rec.x).map_err(&err)?;
        let yhat = &prediction.mean;
        match kind {
            LossKind::Classification => {
                let truth = predicted_class(&y);
                trace.losses.push(if predicted_class(yhat) == truth { 0.0 } else { 1.0 });
            }
            _ => {
                let diff = &y - yhat;
                let n = diff.len() as f64;
                trace.losses.push(diff.iter().map(|d| d.abs()).sum::<f64>() / n);
                trace.squared_errors.push(diff.iter().map(|d| d * d).sum::<f64>() / n);
            }
        }
        trace.predictions.push(yhat.iter().copied().collect());
        bone_step(&mut state, cfg, &rec.x, &y, None).map_err(&err)?;
        trace.changepoints.push(state.bank().modal().runlength == 0);
        if let Some(rows) = rows.as_mut() {
            for (r, lp) in state.bank().log_posterior().map_err(&err)? {
                rows.push((rec.t, r, lp));
            }
        }
    }
    trace.finish();
    Ok((trace, rows))
}

/// Generates (or loads) the data of one trial.
pub fn trial_stream(cfg: &ExperimentConfig, trial: usize) -> Result<(u64, Vec<StreamRecord>)> {
    let seed = derive_seed(cfg.seed, &[trial as u64, stream::DATA]);
    let t = cfg.horizon;
    let records = match cfg.experiment {
        ExperimentKind::PeriodicDrift => gen_periodic_drift(t, seed),
        ExperimentKind::DriftJumps => gen_drift_jumps(t, seed, &cfg.data.drift_jumps())?,
        ExperimentKind::HeavyTail => gen_heavy_tail(t, seed, &cfg.data.heavy_tail())?,
        ExperimentKind::Bandit => gen_bandit_stream(t, seed, &cfg.data.bandit())?,
        ExperimentKind::DependentSegments => gen_dependent_segments(t, seed, &cfg.data.dependent_segments())?,
        ExperimentKind::CsvStream => {
            let path = cfg
                .data
                .csv_path
                .as_ref()
                .ok_or_else(|| BoneError::config("csv-stream needs data.csv_path"))?;
            let mut recs = read_csv_stream(std::path::Path::new(path), cfg.data.ewma_half_life)?;
            recs.truncate(t);
            recs
        }
    };
    Ok((seed, records))
}

fn method_for_trial(cfg: &ExperimentConfig, trial: usize) -> Result<MethodConfig> {
    cfg.method.build(derive_seed(cfg.seed, &[trial as u64]))
}

fn prequential_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let method = method_for_trial(cfg, trial)?;
    let (data_seed, records) = trial_stream(cfg, trial)?;
    let (trace, runlength) = run_stream(&method, &records, cfg.rolling_window, cfg.record_runlength && trial == 0, trial)?;
    Ok(TrialResult {
        trial,
        data_seed,
        summary: compute_metrics(&trace),
        trace,
        runlength,
    })
}

/// Thompson-sampling bandit over independently modelled arms. Rewards use common
/// random numbers: one uniform per arm per step, whichever arm is pulled.
pub fn bandit_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let method = method_for_trial(cfg, trial)?;
    match method.spec.family() {
        Family::BernoulliLogit { .. } if method.spec.input_dim() == 1 && method.spec.param_count() == 1 => {}
        _ => {
            return Err(BoneError::config(
                "bandit arms need a scalar bernoulli-logit model with identity features",
            ))
        }
    }
    let (data_seed, records) = trial_stream(cfg, trial)?;
    let n_arms = cfg.data.bandit().arms;
    let drift_unpulled = cfg.data.drift_unpulled.unwrap_or(true);
    let mut arms = vec![AgentState::new(&method); n_arms];
    let mut policy_rng = rng_for(cfg.seed, &[trial as u64, stream::POLICY]);
    let mut reward_rng = rng_for(cfg.seed, &[trial as u64, stream::REWARD]);
    let mut trace = MetricTrace::new(LossKind::Regret, cfg.rolling_window);
    for rec in &records {
        let err = step_err(trial, rec.t);
        let probs = rec.arm_probs.as_ref().expect("bandit streams carry arm probabilities");
        let a = thompson_action(&arms, &method, &rec.x, &mut policy_rng).map_err(&err)?;
        let uniforms: Vec<f64> = (0..n_arms).map(|_| reward_rng.random::<f64>()).collect();
        let reward = if uniforms[a] < probs[a] { 1.0 } else { 0.0 };
        trace.losses.push(probs.max() - probs[a]);
        trace.predictions.push(vec![a as f64]);
        bone_step(&mut arms[a], &method, &rec.x, &DVector::from_element(1, reward), None).map_err(&err)?;
        if drift_unpulled {
            for (b, arm) in arms.iter_mut().enumerate() {
                if b != a {
                    drift_only(arm, &method).map_err(&err)?;
                }
            }
        }
        trace.changepoints.push(arms[a].bank().modal().runlength == 0);
    }
    trace.finish();
    Ok(TrialResult {
        trial,
        data_seed,
        summary: compute_metrics(&trace),
        trace,
        runlength: None,
    })
}

fn run_trials(
    cfg: &ExperimentConfig,
    opts: RunOptions,
    f: impl Fn(&ExperimentConfig, usize) -> Result<TrialResult> + Sync,
) -> Result<Vec<TrialResult>> {
    let run = |t: usize| {
        log::debug!("trial {t} started");
        let r = f(cfg, t);
        if let Ok(res) = &r {
            log::info!("trial {t}: mean loss {:.6}", res.summary.mean_loss);
        }
        r
    };
    match opts.parallel {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BoneError::config(format!("cannot start worker pool: {e}")))?;
            pool.install(|| (0..cfg.trials).into_par_iter().map(run).collect())
        }
        _ => (0..cfg.trials).map(run).collect(),
    }
}

/// Prequential evaluation of every trial; results are ordered by trial.
pub fn run_prequential(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<TrialResult>> {
    if cfg.experiment == ExperimentKind::Bandit {
        return Err(BoneError::config("bandit experiments run through run_bandit"));
    }
    run_trials(cfg, opts, prequential_trial)
}

pub fn run_bandit(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<TrialResult>> {
    if cfg.experiment != ExperimentKind::Bandit {
        return Err(BoneError::config("run_bandit needs the bandit experiment"));
    }
    run_trials(cfg, opts, bandit_trial)
}

/// Dispatches on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    if let Some(tol) = cfg.psd_tol {
        set_psd_tolerance(tol);
    }
    if cfg.experiment == ExperimentKind::Bandit {
        run_bandit(cfg, opts)
    } else {
        run_prequential(cfg, opts)
    }
}
