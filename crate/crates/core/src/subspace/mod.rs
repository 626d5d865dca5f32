//! Diagnostic matrices, optimal and coupled subspaces, certified bounds.

pub mod alternating;
pub mod baselines;
pub mod basis;
pub mod bounds;
pub mod diagnostic;
pub mod eigen;

pub use alternating::{
    alternating_decomposition, alternating_decomposition_with, optimal_ur, optimal_ur_with, optimal_vs, optimal_vs_with,
    SubspacePair, DEFAULT_MAX_ITER, DEFAULT_STALL_TOL,
};
pub use baselines::{cca, joint_dr, pca_input, pca_output, BaselineKind, CcaResult};
pub use basis::{OrthonormalBasis, Space, ORTHONORMAL_TOL};
pub use bounds::{affine_closed_form, error_sandwich, sandwich_from_parts, AffineSolution, ErrorSandwich};
pub use diagnostic::{
    assemble_hx, assemble_hy, bound_objective, diag_hx, diag_hy, matfree_apply_hx, matfree_apply_hy, DiagnosticMatrix,
};
pub use eigen::{top_eigenbasis, top_eigenbasis_operator, EigenOptions, Spectrum};
