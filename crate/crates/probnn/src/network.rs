//! Fully connected Bayesian network state, the forward moment propagation,
//! and the sequential (per-instance) Bayesian weight updates.
//!
//! Weight columns carry independent Gaussian posteriors. A forward pass
//! propagates the layer input through the weight posteriors to a diagonal
//! Gaussian pre-activation and matches output moments in closed form; the
//! backward pass conditions the output layer's pre-activations on the
//! observed label and pushes the resulting innovation into each neuron's
//! weight posterior. Training is strictly sequential and order-sensitive;
//! states are immutable values, updates return new states.

use nalgebra::{DMatrix, DVector};

use crate::activations::{
    pwl_moments, softmax_moments_traced, MomentEvents, MomentTriple, PwlParams,
};
use crate::error::{Error, Result};
use crate::gauss::{
    condition_parts, ensure_psd, linear_propagate, symmetrize, ConditionParts, GaussianDiag,
    JitterPolicy, WeightPosterior,
};
use crate::mvn::ProbitConfig;

/// Lower bound on a pre-activation variance before it is inverted in the
/// weight update; deterministic inputs can make the predicted variance zero.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Tie tolerance for arg-max label selection.
const TIE_TOL: f64 = 1e-12;

/// Activation family of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Pwl(PwlParams),
    Softmax,
}

/// Width, activation, and bias handling of one layer. When `bias` is set the
/// layer input is augmented with a constant 1 and the weight posteriors carry
/// one extra coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl LayerSpec {
    pub fn pwl(width: usize, params: PwlParams) -> Self {
        LayerSpec {
            width,
            activation: Activation::Pwl(params),
            bias: true,
        }
    }

    pub fn softmax(width: usize) -> Self {
        LayerSpec {
            width,
            activation: Activation::Softmax,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Weight-vector length for a given input width.
    fn fan_in(&self, input_width: usize) -> usize {
        input_width + usize::from(self.bias)
    }
}

/// Immutable network state: layer specs, per-neuron weight posteriors, the
/// probit configuration of the output layer, and the number of update steps
/// applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    posteriors: Vec<Vec<WeightPosterior>>,
    probit: ProbitConfig,
    step_count: u64,
}

impl NetworkState {
    pub fn new(
        input_dim: usize,
        layers: Vec<LayerSpec>,
        posteriors: Vec<Vec<WeightPosterior>>,
        probit: ProbitConfig,
    ) -> Result<Self> {
        NetworkState::restore(input_dim, layers, posteriors, probit, 0)
    }

    /// Validated construction with an explicit step count (checkpoint loads).
    pub fn restore(
        input_dim: usize,
        layers: Vec<LayerSpec>,
        posteriors: Vec<Vec<WeightPosterior>>,
        probit: ProbitConfig,
        step_count: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::param("input_dim", "input width must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::param("layers", "need at least one layer"));
        }
        let last = layers.len() - 1;
        for (idx, layer) in layers.iter().enumerate() {
            if layer.width == 0 {
                return Err(Error::param(
                    "layers",
                    format!("layer {idx} has zero width"),
                ));
            }
            match layer.activation {
                Activation::Softmax if idx != last => {
                    return Err(Error::param(
                        "layers",
                        "softmax is only allowed at the last layer",
                    ));
                }
                Activation::Pwl(_) if idx == last => {
                    return Err(Error::param("layers", "the last layer must be softmax"));
                }
                _ => {}
            }
        }
        if layers[last].width < 2 {
            return Err(Error::param("layers", "softmax layer needs width >= 2"));
        }
        if probit.n_classes() != layers[last].width {
            return Err(Error::dims(
                "NetworkState probit",
                layers[last].width,
                probit.n_classes(),
            ));
        }
        if posteriors.len() != layers.len() {
            return Err(Error::dims(
                "NetworkState posteriors",
                layers.len(),
                posteriors.len(),
            ));
        }
        let mut prev_width = input_dim;
        for (layer, cols) in layers.iter().zip(&posteriors) {
            if cols.len() != layer.width {
                return Err(Error::dims(
                    "NetworkState layer posteriors",
                    layer.width,
                    cols.len(),
                ));
            }
            let fan_in = layer.fan_in(prev_width);
            for p in cols {
                if p.dim() != fan_in {
                    return Err(Error::dims("NetworkState posterior dim", fan_in, p.dim()));
                }
            }
            prev_width = layer.width;
        }
        Ok(NetworkState {
            input_dim,
            layers,
            posteriors,
            probit,
            step_count,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn posteriors(&self) -> &[Vec<WeightPosterior>] {
        &self.posteriors
    }

    pub fn probit(&self) -> &ProbitConfig {
        &self.probit
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Number of classes, i.e. the width of the softmax layer.
    pub fn n_classes(&self) -> usize {
        self.layers.last().map(|l| l.width).unwrap_or(0)
    }

    /// Forward moment propagation for one input. Hidden layers propagate the
    /// output mean as the next layer's point input.
    pub fn forward(&self, x: &DVector<f64>) -> Result<ForwardTrace> {
        let mut events = MomentEvents::default();
        self.forward_traced(x, &mut events)
    }

    fn forward_traced(&self, x: &DVector<f64>, events: &mut MomentEvents) -> Result<ForwardTrace> {
        if x.len() != self.input_dim {
            return Err(Error::dims("forward input", self.input_dim, x.len()));
        }
        let mut value = x.clone();
        let mut trace = Vec::with_capacity(self.layers.len());
        for (layer, cols) in self.layers.iter().zip(&self.posteriors) {
            let input = if layer.bias {
                augment(&value)
            } else {
                value.clone()
            };
            let z = linear_propagate(&input, cols)?;
            let moments = match layer.activation {
                Activation::Pwl(params) => pwl_moments(&z, &params),
                Activation::Softmax => {
                    let (m, ev) = softmax_moments_traced(&z, &self.probit)?;
                    events.negative_variance_clamps += ev.negative_variance_clamps;
                    m
                }
            };
            value = moments.mean_y().clone();
            trace.push(LayerTrace {
                input,
                z,
                moments,
                value: value.clone(),
            });
        }
        Ok(ForwardTrace { layers: trace })
    }

    /// One sequential Bayesian update from a single labeled instance.
    ///
    /// The label is the one-hot encoding over the first `N - 1` classes; the
    /// all-zero vector denotes the last class. Numerical failures skip the
    /// instance and leave the state unchanged (reported, not raised); only
    /// malformed inputs raise errors.
    pub fn backward_update(
        &self,
        x: &DVector<f64>,
        y_obs: &DVector<f64>,
    ) -> Result<(NetworkState, StepReport)> {
        let n_out = self.n_classes() - 1;
        if y_obs.len() != n_out {
            return Err(Error::dims("backward_update label", n_out, y_obs.len()));
        }
        let ones = y_obs.iter().filter(|&&v| v == 1.0).count();
        if ones > 1 || y_obs.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::param(
                "y_obs",
                "label must be one-hot over the modeled classes or all zeros",
            ));
        }

        let mut report = StepReport::default();
        let trace = self.forward_traced(x, &mut report.events)?;

        match self.conditioned_posteriors(&trace, y_obs, &mut report) {
            Ok(posteriors) => {
                let state = NetworkState {
                    input_dim: self.input_dim,
                    layers: self.layers.clone(),
                    posteriors,
                    probit: self.probit.clone(),
                    step_count: self.step_count + 1,
                };
                report.applied = true;
                Ok((state, report))
            }
            Err(err @ Error::JitterExhausted { .. }) => {
                report.applied = false;
                report.skip_reason = Some(err.to_string());
                Ok((self.clone(), report))
            }
            Err(other) => Err(other),
        }
    }

    /// Top-down conditioning pass producing the updated posteriors of every
    /// layer, or a numerical error that makes the caller skip the instance.
    fn conditioned_posteriors(
        &self,
        trace: &ForwardTrace,
        y_obs: &DVector<f64>,
        report: &mut StepReport,
    ) -> Result<Vec<Vec<WeightPosterior>>> {
        let policy = JitterPolicy::default();
        let mut posteriors = self.posteriors.clone();

        let mut observed = y_obs.clone();
        let mut effective_cov: Option<DMatrix<f64>> = None;

        for idx in (0..self.layers.len()).rev() {
            let tr = &trace.layers[idx];
            // The output layer observes a drawn label, not the smooth
            // softmax value, so the observation covariance is the label's
            // own multinomial covariance under the predicted mean; the
            // cross-covariance is unchanged by total expectation. Hidden
            // layers are conditioned on the pseudo-observation with the
            // deflated message covariance instead.
            let moments = match &effective_cov {
                None => MomentTriple::new(
                    tr.moments.mean_y().clone(),
                    label_covariance(tr.moments.mean_y()),
                    tr.moments.cov_zy().clone(),
                )?,
                Some(cov) => MomentTriple::new(
                    tr.moments.mean_y().clone(),
                    cov.clone(),
                    tr.moments.cov_zy().clone(),
                )?,
            };

            let conditioned = condition_parts(&tr.z, &moments, &observed, &policy)?;
            report.record_jitter(conditioned.jitter);

            for (j, posterior) in posteriors[idx].iter_mut().enumerate() {
                let var_z = tr.z.var()[j];
                let floored = var_z.max(VARIANCE_FLOOR);
                let sigma_wz = posterior.cov() * &tr.input;
                let dmean = conditioned.mean[j] - tr.z.mean()[j];
                // Conditioned variance is the diagonal of Sigma_z minus the
                // PSD subtraction, clamped into [0, var_z]; only the diagonal
                // feeds the weight update.
                let dvar = -conditioned.subtracted[(j, j)].clamp(0.0, var_z);

                let mean = posterior.mean() + &sigma_wz * (dmean / floored);
                let cov = posterior.cov()
                    + (&sigma_wz * sigma_wz.transpose()) * (dvar / (floored * floored));
                let psd = ensure_psd(&symmetrize(&cov), &policy)?;
                report.record_jitter(psd.jitter);
                *posterior = WeightPosterior::new(mean, psd.matrix)?;
            }

            if idx > 0 {
                let (pseudo_obs, pseudo_cov) =
                    self.pseudo_observation(trace, idx, &conditioned, report)?;
                observed = pseudo_obs;
                effective_cov = Some(pseudo_cov);
            }
        }
        Ok(posteriors)
    }

    /// Message to the layer below: condition its output on this layer's
    /// pre-activation innovation through the joint Gaussian. The
    /// cross-covariance couples output `i` of the previous layer to
    /// pre-activation `j` through the posterior weight means. Experimental:
    /// exercised only by multi-layer networks.
    fn pseudo_observation(
        &self,
        trace: &ForwardTrace,
        idx: usize,
        conditioned: &ConditionParts,
        report: &mut StepReport,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let tr = &trace.layers[idx];
        let below = &trace.layers[idx - 1];
        let n_below = below.moments.y_dim();
        let n_here = self.layers[idx].width;

        // gain G = Sigma_{y z} Sigma_z^{-1}, with Sigma_z diagonal and
        // Sigma_{y z}[i][j] = var(y_i) * mean weight (i -> j).
        let mut gain = DMatrix::zeros(n_below, n_here);
        for j in 0..n_here {
            let w_mean = self.posteriors[idx][j].mean();
            let var_z = tr.z.var()[j].max(VARIANCE_FLOOR);
            for i in 0..n_below {
                gain[(i, j)] = below.moments.cov_y()[(i, i)] * w_mean[i] / var_z;
            }
        }

        let dmean = &conditioned.mean - tr.z.mean();

        let pseudo_obs = below.moments.mean_y() + &gain * dmean;
        // Covariance deflation G (Sigma~ - Sigma) G^T = -G Q G^T with Q the
        // PSD subtraction from the conditioning step.
        let cov = below.moments.cov_y() - &gain * &conditioned.subtracted * gain.transpose();
        let psd = ensure_psd(&symmetrize(&cov), &JitterPolicy::default())?;
        report.record_jitter(psd.jitter);
        Ok((pseudo_obs, psd.matrix))
    }

    /// Sequential fold of [`Self::backward_update`] over the dataset rows,
    /// in order. Skipped instances are collected in the report.
    pub fn train(
        &self,
        rows: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<(NetworkState, TrainReport)> {
        let mut state = self.clone();
        let mut report = TrainReport::default();
        for (k, (x, y)) in rows.iter().enumerate() {
            let (next, step) = state.backward_update(x, y)?;
            report.absorb(k, &step);
            state = next;
        }
        Ok((state, report))
    }

    /// Class probabilities (all `N` classes, the last one implicit), output
    /// covariance of the modeled classes, and the 1-based arg-max label.
    pub fn predict(&self, x: &DVector<f64>) -> Result<Prediction> {
        let trace = self.forward(x)?;
        let last = trace.layers.last().expect("validated nonempty");
        let mean_y = last.moments.mean_y();
        let m = mean_y.len();

        let mut probabilities = DVector::zeros(m + 1);
        let mut sum = 0.0;
        for j in 0..m {
            probabilities[j] = mean_y[j];
            sum += mean_y[j];
        }
        probabilities[m] = (1.0 - sum).max(0.0);

        let maximum = probabilities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let label = probabilities
            .iter()
            .position(|&p| p >= maximum - TIE_TOL)
            .expect("nonempty probabilities")
            + 1;

        Ok(Prediction {
            probabilities,
            covariance: last.moments.cov_y().clone(),
            label,
        })
    }
}

fn augment(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len() + 1);
    out.rows_mut(0, v.len()).copy_from(v);
    out[v.len()] = 1.0;
    out
}

/// Covariance of the one-hot label over the modeled classes when the class
/// is drawn from the predicted distribution: `diag(mu) - mu mu^T`.
fn label_covariance(mean_y: &DVector<f64>) -> DMatrix<f64> {
    let m = mean_y.len();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            mean_y[i] * (1.0 - mean_y[i])
        } else {
            -mean_y[i] * mean_y[j]
        }
    })
}

/// Per-layer record of one forward pass: the (possibly augmented) input, the
/// pre-activation distribution, the matched output moments, and the point
/// value propagated to the next layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: DVector<f64>,
    pub z: GaussianDiag,
    pub moments: MomentTriple,
    pub value: DVector<f64>,
}

/// Full forward-pass record, one entry per layer.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

/// Prediction bundle: probabilities over all `N` classes (the implicit last
/// class appended), the covariance of the `N - 1` modeled outputs, and the
/// 1-based arg-max label (ties break to the lowest index).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub label: usize,
}

/// Outcome of one update step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// Whether the update was applied (false means the instance was skipped
    /// fail-safe and the state is unchanged).
    pub applied: bool,
    pub skip_reason: Option<String>,
    /// Covariance repairs that needed diagonal jitter.
    pub jitter_events: u32,
    /// Largest jitter magnitude spent in this step.
    pub max_jitter: f64,
    pub events: MomentEvents,
}

impl StepReport {
    fn record_jitter(&mut self, jitter: f64) {
        if jitter > 0.0 {
            self.jitter_events += 1;
            self.max_jitter = self.max_jitter.max(jitter);
        }
    }
}

/// Aggregate over a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub instances: usize,
    pub applied: usize,
    /// Indices of instances skipped by the fail-safe path.
    pub skipped: Vec<usize>,
    pub jitter_events: u32,
    pub max_jitter: f64,
    pub negative_variance_clamps: u32,
}

impl TrainReport {
    fn absorb(&mut self, index: usize, step: &StepReport) {
        self.instances += 1;
        if step.applied {
            self.applied += 1;
        } else {
            self.skipped.push(index);
        }
        self.jitter_events += step.jitter_events;
        self.max_jitter = self.max_jitter.max(step.max_jitter);
        self.negative_variance_clamps += step.events.negative_variance_clamps;
    }
}
