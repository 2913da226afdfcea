use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use probnn_cli::checkpoint;
use probnn_cli::config::ExperimentConfig;
use probnn_cli::data::{gen_data, Dataset};
use probnn_cli::error::{CliError, Result};
use probnn_cli::experiment::{accuracy, eval_grid, run_experiment};

/// Closed-form Bayesian training and prediction for fully connected
/// multi-class networks.
#[derive(Parser)]
#[command(name = "probnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a labeled dataset and write `dataset.csv`.
    GenData {
        /// Experiment config JSON; defaults to the built-in benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset CSV and write `checkpoint.json` and `report.json`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset CSV with header `x1,x2,label`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict class probabilities for one input.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated feature vector, e.g. `0.5,-1.2`.
        #[arg(long)]
        input: String,
    },
    /// Export a predictive-moment grid for a trained network.
    Grid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Supplies bounds and resolution; defaults to the benchmark config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: generate data, train with snapshots, export grids,
    /// checkpoint, and report.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            std::fs::create_dir_all(&out)?;
            let data = gen_data(cfg.m, &cfg.bounds, cfg.seed);
            let path = out.join("dataset.csv");
            std::fs::write(&path, data.to_csv())?;
            println!("wrote {}", path.display());
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let net = cfg.build_network()?;
            let text = std::fs::read_to_string(&data)?;
            let dataset = Dataset::from_csv(&text, net.n_classes())?;
            let (trained, report) = net.train(&dataset.rows)?;
            std::fs::create_dir_all(&out)?;
            checkpoint::save(&trained, &out.join("checkpoint.json"))?;
            let acc = accuracy(&trained, &dataset)?;
            let summary = json!({
                "instances": report.instances,
                "applied": report.applied,
                "skipped": report.skipped,
                "jitter_events": report.jitter_events,
                "max_jitter": report.max_jitter,
                "negative_variance_clamps": report.negative_variance_clamps,
                "train_accuracy": acc,
            });
            std::fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&summary)? + "\n",
            )?;
            println!(
                "trained on {} instances ({} applied), accuracy {}; wrote {}",
                report.instances,
                report.applied,
                acc.map(|a| format!("{a:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                out.join("checkpoint.json").display()
            );
        }
        Command::Predict { checkpoint, input } => {
            let net = checkpoint::load(&checkpoint)?;
            let values: Vec<f64> = input
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Data(format!("bad input component: {e}")))
                })
                .collect::<Result<_>>()?;
            let p = net.predict(&DVector::from_vec(values))?;
            let out = json!({
                "probabilities": p.probabilities.iter().copied().collect::<Vec<_>>(),
                "label": p.label,
                "variances": (0..p.covariance.nrows())
                    .map(|j| p.covariance[(j, j)])
                    .collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Grid {
            checkpoint,
            config,
            out,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let net = checkpoint::load(&checkpoint)?;
            let grid = eval_grid(&net, &cfg.bounds, cfg.grid_resolution)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("grid.csv");
            std::fs::write(&path, grid.to_csv())?;
            println!("wrote {}", path.display());
        }
        Command::Experiment { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_experiment(&cfg, &out)?;
            println!(
                "trained on {} instances ({} applied), accuracy {}, {} snapshots; artifacts in {}",
                outcome.report.instances,
                outcome.report.applied,
                outcome
                    .report
                    .train_accuracy
                    .map(|a| format!("{a:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                outcome.report.snapshots.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
