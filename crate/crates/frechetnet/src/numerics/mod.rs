//! Deterministic sampling, small dense linear algebra, and the isotonic
//! projection the rest of the crate builds on.
//!
//! All randomness flows through [`RngState`], a seeded ChaCha12 stream, so
//! every simulation, initialization, and split is reproducible from a 64-bit
//! seed. Matrices are `ndarray` arrays of `f64` throughout.

mod finite_diff;
mod isotonic;
mod linalg;
mod rng;

pub use finite_diff::finite_diff_gradient;
pub use isotonic::pava_isotonic;
pub use linalg::{auto_ridge, mean_and_cov, ridge_solve_mat, ridge_solve_vec, Cholesky, RidgeSpec};
pub use rng::{mix_seeds, RngState};

use ndarray::{Array1, Array2};

/// Column vector of `f64` entries.
pub type DenseVector = Array1<f64>;
/// Row-major matrix of `f64` entries.
pub type DenseMatrix = Array2<f64>;
