//! Lossless JSON checkpointing of a network state. The document carries
//! explicit array shapes and a schema-version tag; loading a document with
//! a different version fails loudly.

use nalgebra::{DMatrix, DVector};
use probnn::mvn::ProbitConfig;
use probnn::network::{Activation, LayerSpec, NetworkState};
use probnn::{PwlParams, WeightPosterior};
use serde::{Deserialize, Serialize};

use crate::config::ActivationDto;
use crate::error::{CliError, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixDto {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, `rows * cols` of them.
    pub data: Vec<f64>,
}

impl MatrixDto {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixDto {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows())
                .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| m[(r, c)])
                .collect(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::Data(format!(
                "matrix payload has {} entries, shape says {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.data[r * self.cols + c]
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PosteriorRecord {
    pub mean: Vec<f64>,
    pub cov: MatrixDto,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub width: usize,
    pub activation: ActivationDto,
    pub bias: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub input_dim: usize,
    pub step_count: u64,
    pub lambda: f64,
    /// Full correlation matrix of the probit surrogate.
    pub rho: MatrixDto,
    pub layers: Vec<LayerRecord>,
    pub posteriors: Vec<Vec<PosteriorRecord>>,
}

impl Checkpoint {
    pub fn from_state(state: &NetworkState) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            input_dim: state.input_dim(),
            step_count: state.step_count(),
            lambda: state.probit().lambda(),
            rho: MatrixDto::from_matrix(state.probit().rho()),
            layers: state
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    width: l.width,
                    activation: match l.activation {
                        Activation::Softmax => ActivationDto::Softmax,
                        Activation::Pwl(p) => ActivationDto::Pwl {
                            alpha: p.alpha(),
                            beta: p.beta(),
                        },
                    },
                    bias: l.bias,
                })
                .collect(),
            posteriors: state
                .posteriors()
                .iter()
                .map(|cols| {
                    cols.iter()
                        .map(|p| PosteriorRecord {
                            mean: p.mean().iter().copied().collect(),
                            cov: MatrixDto::from_matrix(p.cov()),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn into_state(self) -> Result<NetworkState> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(CliError::Data(format!(
                "checkpoint schema version {} not supported (expected {})",
                self.schema_version, CHECKPOINT_SCHEMA_VERSION
            )));
        }
        let probit = ProbitConfig::new(self.lambda, self.rho.to_matrix()?)?;
        let layers: Vec<LayerSpec> = self
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
        let posteriors: Vec<Vec<WeightPosterior>> = self
            .posteriors
            .into_iter()
            .map(|cols| {
                cols.into_iter()
                    .map(|p| {
                        Ok(WeightPosterior::new(
                            DVector::from_vec(p.mean),
                            p.cov.to_matrix()?,
                        )?)
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        Ok(NetworkState::restore(
            self.input_dim,
            layers,
            posteriors,
            probit,
            self.step_count,
        )?)
    }
}

pub fn save(state: &NetworkState, path: &std::path::Path) -> Result<()> {
    let doc = Checkpoint::from_state(state);
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<NetworkState> {
    let text = std::fs::read_to_string(path)?;
    let doc: Checkpoint = serde_json::from_str(&text)?;
    doc.into_state()
}
