//! Per-step losses and their summaries.

use serde::Serialize;

/// What the per-step loss measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Absolute error of the plug-in prediction.
    Regression,
    /// 0/1 misclassification of the argmax class.
    Classification,
    /// Instantaneous bandit regret against the true arm probabilities.
    Regret,
}

/// Everything recorded while running one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrace {
    pub kind: LossKind,
    pub losses: Vec<f64>,
    /// Mean squared error per step (regression only).
    pub squared_errors: Vec<f64>,
    pub rolling: Vec<f64>,
    pub window: usize,
    /// Whether the weight-argmax hypothesis had runlength 0 after each update.
    pub changepoints: Vec<bool>,
    /// The prediction issued before each observation was revealed.
    pub predictions: Vec<Vec<f64>>,
}

impl MetricTrace {
    pub fn new(kind: LossKind, window: usize) -> Self {
        Self {
            kind,
            losses: Vec::new(),
            squared_errors: Vec::new(),
            rolling: Vec::new(),
            window: window.max(1),
            changepoints: Vec::new(),
            predictions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Fills `rolling` from `losses`.
    pub fn finish(&mut self) {
        self.rolling = rolling_mean(&self.losses, self.window);
    }
}

/// Trailing mean over at most `window` values; the first windows are partial.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Final scalars for one trial. Fields that do not apply to the loss kind are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub mean_loss: f64,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub misclassification: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub changepoints: usize,
    pub max_rolling: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn compute_metrics(trace: &MetricTrace) -> Summary {
    let mean_loss = mean(&trace.losses);
    let rolling = if trace.rolling.len() == trace.losses.len() {
        trace.rolling.clone()
    } else {
        rolling_mean(&trace.losses, trace.window)
    };
    let (rmse, mae, misclassification, cumulative_regret) = match trace.kind {
        LossKind::Regression => (Some(mean(&trace.squared_errors).sqrt()), Some(mean_loss), None, None),
        LossKind::Classification => (None, None, Some(mean_loss), None),
        LossKind::Regret => (None, None, None, Some(trace.losses.iter().sum())),
    };
    Summary {
        steps: trace.len(),
        mean_loss,
        rmse,
        mae,
        misclassification,
        cumulative_regret,
        changepoints: trace.changepoints.iter().filter(|c| **c).count(),
        max_rolling: rolling.iter().copied().fold(f64::NAN, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_error() {
        let mut t = MetricTrace::new(LossKind::Regression, 3);
        t.losses = vec![1.0; 10];
        t.squared_errors = vec![1.0; 10];
        t.changepoints = vec![false; 10];
        t.finish();
        let s = compute_metrics(&t);
        assert_eq!(s.rmse, Some(1.0));
        assert_eq!(s.mae, Some(1.0));
        assert_eq!(s.changepoints, 0);
    }

    #[test]
    fn rolling_peak() {
        let r = rolling_mean(&[0.0, 0.0, 3.0, 0.0, 0.0], 3);
        assert_eq!(r, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        let mut t = MetricTrace::new(LossKind::Classification, 3);
        t.losses = vec![0.0, 0.0, 3.0, 0.0, 0.0];
        t.finish();
        assert_eq!(compute_metrics(&t).max_rolling, 1.0);
    }

    #[test]
    fn partial_windows() {
        assert_eq!(rolling_mean(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
        assert!(rolling_mean(&[], 5).is_empty());
    }

    #[test]
    fn regret_accumulates() {
        let mut t = MetricTrace::new(LossKind::Regret, 2);
        t.losses = vec![0.1, 0.0, 0.25];
        t.changepoints = vec![true, false, true];
        let s = compute_metrics(&t);
        assert!((s.cumulative_regret.unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(s.changepoints, 2);
    }
}
