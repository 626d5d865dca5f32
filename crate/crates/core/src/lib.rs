//! Coupled and goal-oriented input-output dimension reduction for
//! differentiable vector-valued models under Gaussian priors.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`], [`prior`] and [`samples`]: the model abstraction, Gaussian
//!   priors with whitening, and Monte Carlo Jacobian samples;
//! * [`subspace`]: diagnostic matrices, optimal goal-oriented bases, the
//!   alternating eigendecomposition and the certified error bounds;
//! * [`boed`] and [`gsa`]: sensor placement and global sensitivity analysis
//!   built on the diagonals of the diagnostic matrices;
//! * [`oracles`]: independent Monte Carlo and closed-form references;
//! * [`experiments`]: the conditioned-diffusion and Burgers testbeds and the
//!   configuration-driven runner used by the CLI.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boed;
pub mod error;
pub mod experiments;
pub mod gsa;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod prior;
pub mod samples;
pub mod subspace;

pub use error::{Error, Result};
pub use model::{build_linear_gaussian, precondition, AffineModel, FnModel, Model, PreconditionedModel};
pub use prior::{GaussianPrior, NoiseModel};
pub use samples::{sample_jacobians, sample_outputs, JacobianSampleSet, StorageMode};
pub use subspace::{
    affine_closed_form, alternating_decomposition, assemble_hx, assemble_hy, error_sandwich, optimal_ur, optimal_vs,
    top_eigenbasis, DiagnosticMatrix, ErrorSandwich, OrthonormalBasis, Space, Spectrum, SubspacePair,
};
