//! Experiment orchestration: draw the dataset, train sequentially, export
//! predictive-moment grids at the scheduled steps, and write the final
//! checkpoint plus a training report.
//!
//! All artifacts except the report are byte-deterministic for a fixed
//! configuration; the report carries the only timestamp.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use probnn::network::NetworkState;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{Bounds, ExperimentConfig};
use crate::data::{decode_label, gen_data, Dataset};
use crate::error::{CliError, Result};

/// One grid snapshot: predictive means and variances of the two modeled
/// classes over the evaluation lattice.
pub struct Grid {
    pub resolution: usize,
    /// Rows of `(x1, x2, mu_y1, mu_y2, var_y1, var_y2)`, row-major with x1
    /// varying fastest.
    pub rows: Vec<[f64; 6]>,
}

impl Grid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,mu_y1,mu_y2,var_y1,var_y2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r[0], r[1], r[2], r[3], r[4], r[5]
            ));
        }
        out
    }

    pub fn mean_var_y1(&self) -> f64 {
        self.rows.iter().map(|r| r[4]).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_var_y2(&self) -> f64 {
        self.rows.iter().map(|r| r[5]).sum::<f64>() / self.rows.len() as f64
    }
}

/// Evaluate the predictive grid of a (possibly partially trained) network.
pub fn eval_grid(net: &NetworkState, bounds: &Bounds, resolution: usize) -> Result<Grid> {
    let axis =
        |min: f64, max: f64, i: usize| min + (max - min) * i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let x2 = axis(bounds.x2_min, bounds.x2_max, iy);
        for ix in 0..resolution {
            let x1 = axis(bounds.x1_min, bounds.x1_max, ix);
            let p = net.predict(&DVector::from_vec(vec![x1, x2]))?;
            rows.push([
                x1,
                x2,
                p.probabilities[0],
                p.probabilities[1],
                p.covariance[(0, 0)],
                p.covariance[(1, 1)],
            ]);
        }
    }
    Ok(Grid { resolution, rows })
}

#[derive(Debug, Serialize)]
pub struct SnapshotSummary {
    pub step: usize,
    pub grid: String,
    pub mean_var_y1: f64,
    pub mean_var_y2: f64,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    /// Seconds since the epoch; the only non-deterministic artifact field.
    pub generated_at: u64,
    pub schema_version: u32,
    pub instances: usize,
    pub applied: usize,
    pub skipped: Vec<usize>,
    pub jitter_events: u32,
    pub max_jitter: f64,
    pub negative_variance_clamps: u32,
    /// Arg-max accuracy on the training rows; absent for an empty dataset.
    pub train_accuracy: Option<f64>,
    pub snapshots: Vec<SnapshotSummary>,
}

pub struct ExperimentOutcome {
    pub state: NetworkState,
    pub report: ExperimentReport,
    pub grid_files: Vec<PathBuf>,
}

/// Fraction of rows whose arg-max prediction matches the label; `None` for
/// an empty dataset.
pub fn accuracy(net: &NetworkState, data: &Dataset) -> Result<Option<f64>> {
    if data.rows.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for (x, y) in &data.rows {
        let p = net.predict(x)?;
        if p.label == decode_label(y) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / data.rows.len() as f64))
}

/// Run the full pipeline into `out_dir`: dataset CSV, one grid CSV per
/// scheduled snapshot, the final checkpoint, and the training report.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let data = gen_data(cfg.m, &cfg.bounds, cfg.seed);
    std::fs::write(out_dir.join("dataset.csv"), data.to_csv())?;

    let mut net = cfg.build_network()?;
    if net.n_classes() != data.n_classes {
        return Err(CliError::Config(format!(
            "network has {} classes but the dataset labeler produces {}",
            net.n_classes(),
            data.n_classes
        )));
    }

    let mut snapshots = Vec::new();
    let mut grid_files = Vec::new();
    let mut export = |net: &NetworkState, step: usize| -> Result<Option<SnapshotSummary>> {
        if !cfg.snapshot_schedule.contains(&step) {
            return Ok(None);
        }
        let grid = eval_grid(net, &cfg.bounds, cfg.grid_resolution)?;
        let name = format!("grid_step_{step:04}.csv");
        std::fs::write(out_dir.join(&name), grid.to_csv())?;
        grid_files.push(out_dir.join(&name));
        Ok(Some(SnapshotSummary {
            step,
            grid: name,
            mean_var_y1: grid.mean_var_y1(),
            mean_var_y2: grid.mean_var_y2(),
        }))
    };

    if let Some(s) = export(&net, 0)? {
        snapshots.push(s);
    }

    let mut applied = 0usize;
    let mut skipped = Vec::new();
    let mut jitter_events = 0u32;
    let mut max_jitter = 0.0f64;
    let mut clamps = 0u32;
    for (k, (x, y)) in data.rows.iter().enumerate() {
        let (next, step) = net.backward_update(x, y)?;
        if step.applied {
            applied += 1;
        } else {
            skipped.push(k);
        }
        jitter_events += step.jitter_events;
        max_jitter = max_jitter.max(step.max_jitter);
        clamps += step.events.negative_variance_clamps;
        net = next;
        if let Some(s) = export(&net, k + 1)? {
            snapshots.push(s);
        }
    }

    checkpoint::save(&net, &out_dir.join("checkpoint.json"))?;

    let report = ExperimentReport {
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        schema_version: 1,
        instances: data.rows.len(),
        applied,
        skipped,
        jitter_events,
        max_jitter,
        negative_variance_clamps: clamps,
        train_accuracy: accuracy(&net, &data)?,
        snapshots,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;

    Ok(ExperimentOutcome {
        state: net,
        report,
        grid_files,
    })
}
