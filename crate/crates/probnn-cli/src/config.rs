//! Experiment configuration: a JSON document covering dataset generation,
//! the network layout with its initial posteriors, and the snapshot/grid
//! export schedule. The default configuration is the built-in three-class
//! wedge benchmark.

use nalgebra::{DMatrix, DVector};
use probnn::mvn::ProbitConfig;
use probnn::network::{Activation, LayerSpec, NetworkState};
use probnn::{PwlParams, WeightPosterior};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Rectangle the inputs are drawn from (and the grids are evaluated over).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Bounds {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Bounds {
    fn validate(&self) -> Result<()> {
        if !(self.x1_min < self.x1_max && self.x2_min < self.x2_max) {
            return Err(CliError::Config(
                "bounds must satisfy min < max on both axes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ActivationDto {
    Pwl { alpha: f64, beta: f64 },
    Softmax,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerDto {
    pub width: usize,
    pub activation: ActivationDto,
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn default_true() -> bool {
    true
}

/// One weight posterior: mean vector plus row-major covariance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PosteriorDto {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerDto>,
    /// Probit surrogate scale; omitted means the per-class-count default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Shared pair correlation of the surrogate; omitted means 0.5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Initial weight posteriors, one list per layer, one entry per neuron.
    /// Omitted means standard-normal posteriors everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<Vec<PosteriorDto>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Number of training instances to draw.
    pub m: usize,
    pub seed: u64,
    pub bounds: Bounds,
    /// Lattice points per axis for the exported grids.
    pub grid_resolution: usize,
    /// Step counts after which a grid snapshot is exported (0 = prior).
    pub snapshot_schedule: Vec<usize>,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    /// The built-in benchmark: 25 points uniform over [-2, 2]^2 labeled by
    /// the wedge rule, a single bias-free softmax layer of width 3 with
    /// weight means [1, 0], [0, 1], [1, 1] and identity covariances.
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            m: 25,
            seed: 42,
            bounds: Bounds {
                x1_min: -2.0,
                x1_max: 2.0,
                x2_min: -2.0,
                x2_max: 2.0,
            },
            grid_resolution: 41,
            snapshot_schedule: vec![0, 12, 25],
            network: NetworkConfig {
                input_dim: 2,
                layers: vec![LayerDto {
                    width: 3,
                    activation: ActivationDto::Softmax,
                    bias: false,
                }],
                lambda: None,
                rho: None,
                init: Some(vec![vec![
                    PosteriorDto {
                        mean: vec![1.0, 0.0],
                        cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    },
                    PosteriorDto {
                        mean: vec![0.0, 1.0],
                        cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    },
                    PosteriorDto {
                        mean: vec![1.0, 1.0],
                        cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    },
                ]]),
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config schema version {} (expected {})",
                self.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        if self.grid_resolution < 2 {
            return Err(CliError::Config("grid_resolution must be >= 2".into()));
        }
        if let Some(&bad) = self.snapshot_schedule.iter().find(|&&s| s > self.m) {
            return Err(CliError::Config(format!(
                "snapshot step {bad} exceeds instance count {}",
                self.m
            )));
        }
        self.bounds.validate()?;
        Ok(())
    }

    /// Instantiate the network described by the config.
    pub fn build_network(&self) -> Result<NetworkState> {
        let net = &self.network;
        let n_classes = net
            .layers
            .last()
            .ok_or_else(|| CliError::Config("network needs at least one layer".into()))?
            .width;

        let probit = match (net.lambda, net.rho) {
            (None, None) => ProbitConfig::default_for(n_classes),
            (lambda, rho) => ProbitConfig::equicorrelated(
                n_classes,
                lambda.unwrap_or_else(|| ProbitConfig::default_for(n_classes).lambda()),
                rho.unwrap_or(0.5),
            )?,
        };

        let layers: Vec<LayerSpec> = net
            .layers
            .iter()
            .map(|l| {
                Ok(LayerSpec {
                    width: l.width,
                    activation: match l.activation {
                        ActivationDto::Softmax => Activation::Softmax,
                        ActivationDto::Pwl { alpha, beta } => {
                            Activation::Pwl(PwlParams::new(alpha, beta)?)
                        }
                    },
                    bias: l.bias,
                })
            })
            .collect::<Result<_>>()?;

        let posteriors: Vec<Vec<WeightPosterior>> = match &net.init {
            Some(init) => init
                .iter()
                .map(|cols| cols.iter().map(posterior_from_dto).collect::<Result<_>>())
                .collect::<Result<_>>()?,
            None => {
                let mut prev = net.input_dim;
                layers
                    .iter()
                    .map(|l| {
                        let fan_in = prev + usize::from(l.bias);
                        prev = l.width;
                        (0..l.width)
                            .map(|_| WeightPosterior::standard(fan_in))
                            .collect()
                    })
                    .collect()
            }
        };

        Ok(NetworkState::new(
            net.input_dim,
            layers,
            posteriors,
            probit,
        )?)
    }
}

fn posterior_from_dto(dto: &PosteriorDto) -> Result<WeightPosterior> {
    let n = dto.mean.len();
    if dto.cov.len() != n || dto.cov.iter().any(|row| row.len() != n) {
        return Err(CliError::Config(format!(
            "posterior covariance must be {n}x{n} to match the mean"
        )));
    }
    let mean = DVector::from_vec(dto.mean.clone());
    let cov = DMatrix::from_fn(n, n, |r, c| dto.cov[r][c]);
    Ok(WeightPosterior::new(mean, cov)?)
}
