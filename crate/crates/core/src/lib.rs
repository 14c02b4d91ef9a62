//! Curvature-based fault diagnosis for small attention models.
//!
//! The crate trains tiny attention networks on synthetic tasks, computes
//! exact Hessian-vector products by double reverse-mode differentiation, and
//! turns them into diagnostics: spectral summaries per parameter group,
//! cross-group interaction strengths, perturbation robustness sweeps, and a
//! regularization intervention that damps harmful coupling.

pub mod autodiff;
pub mod diagnosis;
pub mod error;
pub mod linalg;
pub mod models;
pub mod perturb;
pub mod pipeline;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
