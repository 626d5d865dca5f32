//! The two testbeds (conditioned diffusion and viscous Burgers), the Matérn
//! prior, and the config-driven runner behind the CLI.

pub mod burgers;
pub mod conddiff;
pub mod config;
pub mod matern;
pub mod runner;

pub use burgers::BurgersModel;
pub use conddiff::ConditionedDiffusion;
pub use config::{ExperimentConfig, ExperimentKind, Proposal, Scale};
pub use matern::{burgers_prior, matern_covariance};
pub use runner::{git_blob_sha256, report, run_experiment, Manifest, RunOutcome};
