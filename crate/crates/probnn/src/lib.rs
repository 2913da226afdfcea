//! Closed-form Bayesian training and prediction for fully connected
//! multi-class networks.
//!
//! Network weights are Gaussian posteriors updated one observation at a
//! time by exact joint-Gaussian conditioning; the nonlinear step is handled
//! by matching output moments in closed form. Hidden layers use
//! piecewise-linear activations, the output layer uses a probit surrogate
//! of the softmax whose Gaussian expectation reduces to a multivariate
//! normal CDF. There is no gradient descent and no sampling anywhere in the
//! training or prediction path; Monte Carlo exists only as a test oracle.
//!
//! Modules:
//! - [`gauss`] — Gaussian vector types, linear propagation, conditioning,
//!   PSD repair.
//! - [`mvn`] — probit configuration, standardized correlations, and the
//!   multivariate normal CDF with its partial derivatives.
//! - [`activations`] — closed-form output moments for piecewise-linear and
//!   softmax layers, plus probit calibration.
//! - [`network`] — network state, forward moment propagation, sequential
//!   Bayesian weight updates, prediction.
//! - [`oracle`] — Monte Carlo reference estimators, used only by tests.

pub mod activations;
pub mod error;
pub mod gauss;
pub mod mvn;
pub mod network;
pub mod oracle;

pub use activations::{MomentTriple, PwlParams, SoftmaxDerivs};
pub use error::{Error, Result};
pub use gauss::{GaussianDiag, GaussianFull, JitterPolicy, WeightPosterior};
pub use mvn::ProbitConfig;
pub use network::{Activation, LayerSpec, NetworkState, Prediction};
