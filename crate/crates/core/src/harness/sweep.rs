//! Grid sweeps over a warmup prefix. Reports every grid point and the argmin of the
//! mean loss; it does not search beyond the grid.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{BoneError, Result};

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    /// `(key, value)` in sorted key order.
    pub values: Vec<(String, f64)>,
    /// Mean loss of each trial over the warmup prefix.
    pub trial_losses: Vec<f64>,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub keys: Vec<String>,
    pub warmup: usize,
    pub points: Vec<SweepPoint>,
    /// Index of the lowest mean loss; ties go to the earlier point.
    pub argmin: usize,
}

/// Cartesian product of the grid in key order, last key varying fastest.
pub fn grid_points(grid: &std::collections::BTreeMap<String, Vec<f64>>) -> Vec<Vec<(String, f64)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q: Vec<(String, f64)> = p.clone();
                q.push((key.clone(), *v));
                next.push(q);
            }
        }
        points = next;
    }
    points
}

pub fn run_sweep(cfg: &ExperimentConfig, opts: RunOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| BoneError::config("sweep needs a `sweep` section"))?;
    let warmup = sweep.warmup.unwrap_or(cfg.horizon).min(cfg.horizon);
    if warmup == 0 {
        return Err(BoneError::config("sweep warmup must be at least 1"));
    }
    let mut points = Vec::new();
    for (index, values) in grid_points(&sweep.grid).into_iter().enumerate() {
        let mut point_cfg = cfg.clone();
        for (k, v) in &values {
            point_cfg = point_cfg.with_override(k, *v)?;
        }
        point_cfg.horizon = warmup;
        point_cfg.sweep = None;
        point_cfg.record_runlength = false;
        log::info!("sweep point {index}: {values:?}");
        let results = run_experiment(&point_cfg, opts)?;
        let trial_losses: Vec<f64> = results.iter().map(|r| r.summary.mean_loss).collect();
        let n = trial_losses.len() as f64;
        let mean = trial_losses.iter().sum::<f64>() / n;
        let se = if trial_losses.len() > 1 {
            (trial_losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        points.push(SweepPoint {
            index,
            values,
            trial_losses,
            mean,
            se,
        });
    }
    let mut argmin = 0;
    for p in &points {
        if p.mean < points[argmin].mean {
            argmin = p.index;
        }
    }
    Ok(SweepOutcome {
        keys: sweep.grid.keys().cloned().collect(),
        warmup,
        points,
        argmin,
    })
}

/// Writes `sweep.csv` (one row per grid point per trial) and `sweep_summary.json`.
pub fn export_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| BoneError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join("sweep.csv");
    let csv_err = |source| BoneError::Csv {
        path: csv_path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    let mut header = vec!["point".to_string()];
    header.extend(outcome.keys.iter().cloned());
    header.extend(["trial".to_string(), "mean_loss".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for p in &outcome.points {
        for (trial, loss) in p.trial_losses.iter().enumerate() {
            let mut row = vec![p.index.to_string()];
            row.extend(p.values.iter().map(|(_, v)| v.to_string()));
            row.extend([trial.to_string(), loss.to_string()]);
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| BoneError::Io {
        path: csv_path.clone(),
        source,
    })?;

    let json_path = dir.join("sweep_summary.json");
    let io_err = |source| BoneError::Io {
        path: json_path.clone(),
        source,
    };
    let mut f = std::fs::File::create(&json_path).map_err(io_err)?;
    let best = &outcome.points[outcome.argmin];
    let value = serde_json::json!({
        "keys": outcome.keys,
        "warmup": outcome.warmup,
        "points": outcome.points.iter().map(|p| serde_json::json!({
            "point": p.index,
            "values": p.values.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
            "mean_loss": p.mean,
            "se": p.se,
        })).collect::<Vec<_>>(),
        "argmin": {
            "point": best.index,
            "values": best.values.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
            "mean_loss": best.mean,
        },
    });
    serde_json::to_writer_pretty(&mut f, &value).map_err(|e| io_err(e.into()))?;
    writeln!(f).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"{
        "experiment": "heavy-tail", "horizon": 120, "trials": 2, "seed": 3,
        "method": {"name": "RL-PR[5]",
                   "model": {"family": "linear-gaussian", "input_dim": 1, "features": {"kind": "poly", "degree": 2}, "obs_noise": 1.0},
                   "policy": {"kind": "rl-prior-reset"}, "hazard": 0.01},
        "sweep": {"warmup": 40, "grid": {"hazard": [0.001, 0.01, 0.1], "obs_noise": [0.5, 2.0]}}
    }"#;

    #[test]
    fn grid_is_cartesian_in_key_order() {
        let cfg = ExperimentConfig::from_json(CFG).unwrap();
        let pts = grid_points(&cfg.sweep.unwrap().grid);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![("hazard".into(), 0.001), ("obs_noise".into(), 0.5)]);
        assert_eq!(pts[1], vec![("hazard".into(), 0.001), ("obs_noise".into(), 2.0)]);
        assert_eq!(pts[5], vec![("hazard".into(), 0.1), ("obs_noise".into(), 2.0)]);
    }

    #[test]
    fn sweep_visits_every_point_and_trial() {
        let cfg = ExperimentConfig::from_json(CFG).unwrap();
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.points.len(), 6);
        assert_eq!(out.warmup, 40);
        assert!(out.points.iter().all(|p| p.trial_losses.len() == 2));
        let best = out.points.iter().map(|p| p.mean).fold(f64::INFINITY, f64::min);
        assert_eq!(out.points[out.argmin].mean, best);

        let dir = tempfile::tempdir().unwrap();
        export_sweep(&out, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "point,hazard,obs_noise,trial,mean_loss");
        assert_eq!(text.lines().count(), 13);
        assert!(dir.path().join("sweep_summary.json").exists());
    }

    #[test]
    fn missing_section_is_a_config_error() {
        let cfg = ExperimentConfig::from_json(&CFG.replace(
            r#","sweep": {"warmup": 40, "grid": {"hazard": [0.001, 0.01, 0.1], "obs_noise": [0.5, 2.0]}}"#,
            "",
        ));
        let mut cfg = cfg.unwrap();
        cfg.sweep = None;
        assert!(run_sweep(&cfg, RunOptions::default()).unwrap_err().is_config());
    }
}
