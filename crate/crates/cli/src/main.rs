use std::path::PathBuf;
use std::process::ExitCode;

use bone_core::datagen::{gen_bandit_stream, gen_dependent_segments, gen_drift_jumps, gen_heavy_tail, gen_periodic_drift};
use bone_core::harness::{export_results, export_sweep, run_experiment, run_sweep, write_stream_csv, ExperimentConfig, ExperimentKind, RunOptions};
use bone_core::BoneError;
use clap::{Parser, Subcommand};

/// Bayesian online learning experiments on non-stationary streams.
#[derive(Parser, Debug)]
#[command(name = "bone", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write per-step losses plus a JSON summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; defaults to the config's output_path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads for trials.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Evaluate every point of the config's sweep grid on the warmup prefix.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for sweep.csv and sweep_summary.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Dump a raw synthetic stream to CSV.
    Gen {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &BoneError) -> u8 {
    match e.root() {
        BoneError::NumericDomain { .. } => 3,
        BoneError::Io { .. } | BoneError::Csv { .. } => 1,
        _ => 2,
    }
}

fn default_horizon(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::PeriodicDrift => 720,
        ExperimentKind::Bandit => 10_000,
        _ => 1000,
    }
}

fn execute(cli: Cli) -> Result<(), BoneError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
            parallel,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let out = out
                .or_else(|| cfg.output_path.as_ref().map(PathBuf::from))
                .ok_or_else(|| BoneError::Config("no output path: pass --out or set output_path".into()))?;
            log::info!("running {} on {} ({} trials)", cfg.method.name, cfg.experiment.name(), cfg.trials);
            let results = run_experiment(&cfg, RunOptions { parallel })?;
            export_results(&results, &cfg, &out)?;
            let n = results.len().max(1) as f64;
            let mean = results.iter().map(|r| r.summary.mean_loss).sum::<f64>() / n;
            println!("{}: mean loss {mean:.6} over {} trials -> {}", cfg.method.name, results.len(), out.display());
        }
        Command::Sweep { config, out, parallel } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_sweep(&cfg, RunOptions { parallel })?;
            export_sweep(&outcome, &out)?;
            let best = &outcome.points[outcome.argmin];
            let values: Vec<String> = best.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!(
                "best of {} points: {} (mean loss {:.6}) -> {}",
                outcome.points.len(),
                values.join(", "),
                best.mean,
                out.display()
            );
        }
        Command::Gen {
            experiment,
            out,
            horizon,
            seed,
        } => {
            let kind: ExperimentKind = experiment.parse()?;
            let t = horizon.unwrap_or_else(|| default_horizon(kind));
            let records = match kind {
                ExperimentKind::PeriodicDrift => gen_periodic_drift(t, seed),
                ExperimentKind::DriftJumps => gen_drift_jumps(t, seed, &Default::default())?,
                ExperimentKind::HeavyTail => gen_heavy_tail(t, seed, &Default::default())?,
                ExperimentKind::Bandit => gen_bandit_stream(t, seed, &Default::default())?,
                ExperimentKind::DependentSegments => gen_dependent_segments(t, seed, &Default::default())?,
                ExperimentKind::CsvStream => {
                    return Err(BoneError::Config("csv-stream has no generator".into()));
                }
            };
            write_stream_csv(&records, &out)?;
            println!("{} records -> {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BONE_LOG", "error")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
