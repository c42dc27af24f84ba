//! CSV and JSON output. Every writer is deterministic: rows are ordered by
//! `(trial, t)` and JSON objects have sorted keys.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::datagen::StreamRecord;
use crate::error::{BoneError, Result};

use super::config::ExperimentConfig;
use super::run::{RunlengthRows, TrialResult};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BoneError + '_ {
    move |source| BoneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BoneError + '_ {
    move |source| BoneError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map_err(io_err(path))
}

/// `<stem>.summary.json` next to the CSV.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

/// `<stem>.runlength.csv` next to the CSV.
pub fn runlength_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("runlength.csv")
}

fn mean_and_se(values: &[f64]) -> Value {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    json!({ "mean": mean, "se": se })
}

/// Per-trial summaries, their across-trial mean and standard error, and the config.
pub fn summary_json(results: &[TrialResult], cfg: &ExperimentConfig) -> Result<Value> {
    let trials: Vec<Value> = results
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(&r.summary).expect("summaries serialise");
            v["trial"] = json!(r.trial);
            v["data_seed"] = json!(r.data_seed);
            v
        })
        .collect();
    let mut aggregate = Map::new();
    if !results.is_empty() {
        let metrics: [(&str, fn(&TrialResult) -> Option<f64>); 5] = [
            ("mean_loss", |r| Some(r.summary.mean_loss)),
            ("rmse", |r| r.summary.rmse),
            ("mae", |r| r.summary.mae),
            ("misclassification", |r| r.summary.misclassification),
            ("cumulative_regret", |r| r.summary.cumulative_regret),
        ];
        for (name, get) in metrics {
            let values: Option<Vec<f64>> = results.iter().map(get).collect();
            if let Some(values) = values {
                aggregate.insert(name.to_string(), mean_and_se(&values));
            }
        }
        let cps: Vec<f64> = results.iter().map(|r| r.summary.changepoints as f64).collect();
        aggregate.insert("changepoints".to_string(), mean_and_se(&cps));
    }
    Ok(json!({
        "experiment": cfg.experiment.name(),
        "method": cfg.method.display_name()?,
        "seed": cfg.seed,
        "trials": trials,
        "aggregate": aggregate,
        "config": serde_json::to_value(cfg).map_err(|e| BoneError::config(e.to_string()))?,
    }))
}

/// Writes the per-step CSV, the summary JSON and, when recorded, the runlength posterior.
pub fn export_results(results: &[TrialResult], cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let method = cfg.method.display_name()?;
    let experiment = cfg.experiment.name();
    let seed = cfg.seed.to_string();
    {
        let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
        w.write_record(["trial", "t", "loss", "rolling", "method", "experiment", "seed"])
            .map_err(csv_err(path))?;
        let mut ordered: Vec<&TrialResult> = results.iter().collect();
        ordered.sort_by_key(|r| r.trial);
        for r in ordered {
            for (t, (loss, rolling)) in r.trace.losses.iter().zip(&r.trace.rolling).enumerate() {
                w.write_record([
                    r.trial.to_string(),
                    t.to_string(),
                    loss.to_string(),
                    rolling.to_string(),
                    method.clone(),
                    experiment.to_string(),
                    seed.clone(),
                ])
                .map_err(csv_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))?;
    }

    let summary = summary_json(results, cfg)?;
    let sp = summary_path(path);
    let mut f = BufWriter::new(create(&sp)?);
    serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| BoneError::Io {
        path: sp.clone(),
        source: e.into(),
    })?;
    writeln!(f).map_err(io_err(&sp))?;
    f.flush().map_err(io_err(&sp))?;

    if let Some(rows) = results.iter().find(|r| r.trial == 0).and_then(|r| r.runlength.as_ref()) {
        write_runlength_csv(rows, &runlength_path(path))?;
    }
    Ok(())
}

/// Rows `(t, r, log_posterior)`.
pub fn write_runlength_csv(rows: &RunlengthRows, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(["t", "r", "log_posterior"]).map_err(csv_err(path))?;
    for (t, r, lp) in rows {
        w.write_record([t.to_string(), r.to_string(), lp.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Dumps a raw stream: `t, x0.., y0.., theta0.., changepoint, p0..`, with only the
/// columns the stream carries.
pub fn write_stream_csv(records: &[StreamRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    let first = match records.first() {
        Some(r) => r,
        None => {
            w.write_record(["t"]).map_err(csv_err(path))?;
            return w.flush().map_err(io_err(path));
        }
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.x.len()).map(|i| format!("x{i}")));
    header.extend((0..first.y.len()).map(|i| format!("y{i}")));
    if let Some(th) = &first.true_theta {
        header.extend((0..th.len()).map(|i| format!("theta{i}")));
    }
    if first.is_changepoint.is_some() {
        header.push("changepoint".to_string());
    }
    if let Some(p) = &first.arm_probs {
        header.extend((0..p.len()).map(|i| format!("p{i}")));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for r in records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.extend(r.y.iter().map(|v| v.to_string()));
        if let Some(th) = &r.true_theta {
            row.extend(th.iter().map(|v| v.to_string()));
        }
        if let Some(c) = r.is_changepoint {
            row.push(u8::from(c).to_string());
        }
        if let Some(p) = &r.arm_probs {
            row.extend(p.iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
