//! Curvature analysis: Hessian-vector operators and the estimators built on
//! them.
//!
//! The only access path to second-order structure is [`CurvatureOperator`],
//! a matrix-free `v -> H v` map. On top of it sit:
//!
//! - [`dense_hessian`]: exact reconstruction column by column (small groups
//!   and test oracles; guarded by [`DENSE_DIM_GUARD`]),
//! - [`exact_spectrum`]: full eigenvalues of a dense symmetric matrix,
//! - [`lanczos_extreme`]: extreme eigenvalues without materializing anything,
//! - [`hutchinson_trace`]: unbiased stochastic trace with a standard error,
//! - [`interaction_matrix`]: signed cross-group coupling strengths,
//! - [`spectral_report`]: the per-group summary combining the stochastic
//!   estimators.

mod dense;
mod eigen;
mod hutchinson;
mod interaction;
mod lanczos;
mod operator;
mod report;

pub use dense::{dense_hessian, DENSE_DIM_GUARD};
pub use eigen::{exact_spectrum, tridiag_eigenvalues, DEFAULT_SYM_TOL};
pub use hutchinson::{hutchinson_trace, TraceEstimate, DEFAULT_PROBES};
pub use interaction::{interaction_matrix, InteractionMatrix, InteractionMode};
pub use lanczos::{lanczos_extreme, LanczosResult, DEFAULT_MAX_ITERS, DEFAULT_TOL};
pub use operator::{symmetry_defect, CurvatureOperator, GraphHvpOperator, MatrixOperator, Restricted};
pub use report::{spectral_report, SpectralReport, StochasticConfig};
