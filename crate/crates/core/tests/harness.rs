//! End-to-end checks of the experiment loops and exports.

use bone_core::datagen::StreamRecord;
use bone_core::harness::run::run_stream;
use bone_core::harness::{export_results, run_experiment, ExperimentConfig, RunOptions};
use bone_core::BoneError;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEAVY: &str = r#"{
    "experiment": "heavy-tail", "horizon": 150, "trials": 3, "seed": 11, "record_runlength": true,
    "method": {"name": "WoLF+RL-PR[5]",
               "model": {"family": "linear-gaussian", "input_dim": 1, "features": {"kind": "poly", "degree": 2}, "obs_noise": 1.0},
               "prior": {"var": 10.0},
               "policy": {"kind": "rl-prior-reset"}, "hazard": 0.01, "wolf_c": 4.0}
}"#;

fn linear_stream(n: usize, seed: u64, noise: f64) -> Vec<StreamRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|t| {
            let x: f64 = rng.random_range(-2.0..2.0);
            let e: f64 = rng.random_range(-1.0..1.0);
            StreamRecord {
                t,
                x: DVector::from_element(1, x),
                y: DVector::from_element(1, 0.7 - 1.3 * x + noise * e),
                true_theta: None,
                is_changepoint: None,
                arm_probs: None,
            }
        })
        .collect()
}

fn c_static(noise: f64) -> bone_core::agents::MethodConfig {
    let text = format!(
        r#"{{"experiment": "heavy-tail", "horizon": 1,
            "method": {{"name": "C-Static",
                       "model": {{"family": "linear-gaussian", "input_dim": 1, "features": {{"kind": "with-bias"}}, "obs_noise": {noise}}},
                       "policy": {{"kind": "static"}}}}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap().method.build(0).unwrap()
}

#[test]
fn conjugate_regression_recovers_noise_free_line() {
    let recs = linear_stream(300, 1, 0.0);
    let (trace, _) = run_stream(&c_static(1e-6), &recs, 50, false, 0).unwrap();
    let tail = &trace.squared_errors[250..];
    let rmse = (tail.iter().sum::<f64>() / 50.0).sqrt();
    assert!(rmse < 1e-3, "rmse {rmse}");
}

#[test]
fn predictions_never_read_future_targets() {
    let cfg = ExperimentConfig::from_json(HEAVY).unwrap().method.build(0).unwrap();
    let recs = linear_stream(120, 2, 0.5);
    let (base, _) = run_stream(&cfg, &recs, 10, false, 0).unwrap();
    for cut in [0usize, 17, 60, 119] {
        let mut mutated = recs.clone();
        for r in mutated.iter_mut().skip(cut + 1) {
            r.y[0] += 1e3;
        }
        let (trace, _) = run_stream(&cfg, &mutated, 10, false, 0).unwrap();
        assert_eq!(trace.predictions[..=cut], base.predictions[..=cut]);
    }
}

#[test]
fn zero_horizon_gives_empty_traces() {
    let cfg = ExperimentConfig::from_json(&HEAVY.replace("\"horizon\": 150", "\"horizon\": 0")).unwrap();
    let results = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|r| r.trace.is_empty() && r.trace.rolling.is_empty()));
}

#[test]
fn traces_have_horizon_length() {
    let cfg = ExperimentConfig::from_json(HEAVY).unwrap();
    for r in run_experiment(&cfg, RunOptions::default()).unwrap() {
        assert_eq!(r.trace.len(), 150);
        assert_eq!(r.trace.rolling.len(), 150);
        assert_eq!(r.trace.changepoints.len(), 150);
    }
}

#[test]
fn exports_are_byte_identical_and_order_independent() {
    let cfg = ExperimentConfig::from_json(HEAVY).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    export_results(&run_experiment(&cfg, RunOptions::default()).unwrap(), &cfg, &a).unwrap();
    export_results(&run_experiment(&cfg, RunOptions { parallel: Some(3) }).unwrap(), &cfg, &b).unwrap();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a.with_extension("summary.json")), read(&b.with_extension("summary.json")));
    assert_eq!(read(&a.with_extension("runlength.csv")), read(&b.with_extension("runlength.csv")));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 150);
}

#[test]
fn runlength_posterior_rows_normalise() {
    let cfg = ExperimentConfig::from_json(HEAVY).unwrap();
    let results = run_experiment(&cfg, RunOptions::default()).unwrap();
    let rows = results[0].runlength.as_ref().unwrap();
    assert!(results[1..].iter().all(|r| r.runlength.is_none()));
    for t in 0..150 {
        let mass: f64 = rows.iter().filter(|r| r.0 == t).map(|r| r.2.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9, "t = {t}: {mass}");
    }
}

#[test]
fn single_arm_has_no_regret() {
    let text = r#"{
        "experiment": "bandit", "horizon": 200, "trials": 2, "seed": 5, "data": {"arms": 1},
        "method": {"name": "C-ACI", "model": {"family": "bernoulli-logit", "input_dim": 1},
                   "policy": {"kind": "aci", "alpha": 0.01}}
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    for r in run_experiment(&cfg, RunOptions::default()).unwrap() {
        assert_eq!(r.summary.cumulative_regret, Some(0.0));
    }
}

#[test]
fn agent_errors_report_the_step() {
    let text = r#"{
        "experiment": "heavy-tail", "horizon": 1,
        "method": {"name": "C-Static", "model": {"family": "bernoulli-logit", "input_dim": 1},
                   "policy": {"kind": "static"}}
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap().method.build(0).unwrap();
    let mut recs = linear_stream(10, 3, 0.0);
    for r in recs.iter_mut() {
        r.y[0] = f64::from(r.x[0] > 0.0);
    }
    recs[6].y[0] = 2.0;
    match run_stream(&cfg, &recs, 5, false, 4).unwrap_err() {
        BoneError::Step { trial, step, .. } => assert_eq!((trial, step), (4, 6)),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn csv_stream_with_ewma() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("series.csv");
    let mut text = String::from("x,y\n");
    for r in linear_stream(80, 7, 0.1) {
        text.push_str(&format!("{},{}\n", r.x[0], r.y[0]));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = format!(
        r#"{{"experiment": "csv-stream", "horizon": 50, "data": {{"csv_path": "{}", "ewma_half_life": 20.0}},
            "method": {{"name": "C-Static",
                       "model": {{"family": "linear-gaussian", "input_dim": 1, "features": {{"kind": "with-bias"}}, "obs_noise": 1.0}},
                       "policy": {{"kind": "static"}}}}}}"#,
        data.display()
    );
    let cfg = ExperimentConfig::from_json(&cfg).unwrap();
    let results = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert_eq!(results[0].trace.len(), 50);
    assert!(results[0].summary.mae.unwrap().is_finite());
}
