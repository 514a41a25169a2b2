//! Sketched kernel machines with generic Lipschitz losses.
//!
//! This crate implements regularized empirical risk minimization in
//! reproducing kernel Hilbert spaces where the representer coefficients are
//! restricted to a random subspace through a sketch matrix `S` (the
//! substitution `alpha = S^T gamma`). The centerpiece is the family of
//! p-sparsified Rademacher/Gaussian sketches, which are stored in decomposed
//! form (a small dense mixing factor times a sub-sampling of Gram rows) so
//! that the sketched Gram products `S K` and `S K S^T` never require the full
//! Gram matrix.
//!
//! Module map:
//! - [`kernels`]: scalar kernels, Gram evaluation, output matrices for
//!   decomposable matrix-valued kernels.
//! - [`sketch`]: sketch operator generation, the decomposition trick, sketched
//!   Gram products, random Fourier feature baseline.
//! - [`spectrum`]: critical radius, statistical dimension, and spectral
//!   certification of a sketch against a given Gram matrix.
//! - [`losses`]: Lipschitz loss families (Huber, epsilon-insensitive, pinball,
//!   square) with subgradients, plus evaluation metrics.
//! - [`solver`]: sketched and unsketched ERM solvers, feature-map reduction,
//!   ADAM subgradient descent, closed-form sketched ridge.
//! - [`data`]: synthetic generators, CSV ingestion, splits, standardization.
//! - [`bench`]: experiment configs, sweep runner, and report rendering used by
//!   the `bench` CLI.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// parameters along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod sketch;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};
