//! Regression with metric-space-valued responses.
//!
//! `frechetnet` trains feed-forward ReLU networks whose output layer is a
//! weighted Fréchet mean: the final hidden-layer representations drive
//! global-Fréchet-regression weights over the training responses, and the
//! prediction is the weighted mean of those responses in the geometry of the
//! response space. Supported response spaces:
//!
//! * univariate distributions as quantile functions on a fixed probability
//!   grid (2-Wasserstein metric),
//! * graph Laplacians (Frobenius metric),
//! * compositions on the simplex (Aitchison metric),
//! * plain Euclidean vectors, where the model reduces to an ordinary
//!   least-squares output layer on the learned features.
//!
//! Training minimizes the empirical Fréchet risk (mean squared metric
//! distance between responses and predictions) with momentum SGD, a 4:1
//! train/validation split, and validation-based early stopping. The
//! [`experiments`] module has simulation generators and a Monte Carlo /
//! cross-validation harness; the `frechetnet` binary exposes the whole
//! pipeline as subcommands (`simulate`, `train`, `predict`, `reproduce`).
//!
//! Start with the runnable programs under `examples/` for end-to-end usage.

pub mod cli;
pub mod data;
mod error;
pub mod experiments;
pub mod gradients;
pub mod head;
pub mod network;
pub mod numerics;
pub mod spaces;
pub mod training;

pub use error::{Error, Result};
