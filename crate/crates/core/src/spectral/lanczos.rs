//! Lanczos iteration for extreme eigenvalues of a symmetric operator.

use super::eigen::tridiag_eigenvalues;
use super::operator::CurvatureOperator;
use crate::error::{Error, Result};
use crate::linalg::FlatVector;
use crate::rng::{self, purpose};
use rand::Rng;

/// Default iteration cap and stopping tolerance.
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosResult {
    pub eigs_min: f64,
    pub eigs_max: f64,
    /// Lanczos steps actually taken (tridiagonal dimension).
    pub iters: usize,
    /// False when the iteration hit max_iters before both extremes settled.
    pub converged: bool,
    /// Breakdowns handled by restarting with a fresh orthogonal vector; each
    /// leaves a zero coupling in the tridiagonal matrix (block union).
    pub restarts: usize,
}

/// Extreme eigenvalues via Lanczos with full reorthogonalization.
///
/// Starts from a seeded random unit vector. Stops once both extreme Ritz
/// values change by less than `tol · max(1, |value|)` between consecutive
/// steps, when the basis spans the whole space (exact), or at `max_iters`
/// (reported as unconverged, never silent). A breakdown (zero residual) is
/// handled by restarting with a fresh seeded vector orthogonal to the basis
/// built so far; the union of the resulting tridiagonal blocks carries the
/// spectrum estimate.
pub fn lanczos_extreme(
    op: &mut dyn CurvatureOperator,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<LanczosResult> {
    let n = op.dim();
    if max_iters < 2 {
        return Err(Error::InvalidConfig {
            field: "max_iters".into(),
            message: format!("need at least 2 iterations, got {max_iters}"),
        });
    }
    if n < 2 {
        return Err(Error::InvalidConfig {
            field: "dim".into(),
            message: format!("operator dimension {n} < 2"),
        });
    }

    let mut basis: Vec<FlatVector> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut restarts = 0usize;

    let mut v = random_orthonormal(&basis, n, seed, 0)
        .expect("empty basis always admits a start vector");
    // β entering the current step and the previous basis vector; zero/None
    // after a restart so no old-block coupling is subtracted.
    let mut beta_prev = 0.0;
    let mut v_prev: Option<FlatVector> = None;

    let mut last_extremes: Option<(f64, f64)> = None;
    let mut extremes = (f64::NAN, f64::NAN);
    let mut converged = false;

    while alphas.len() < max_iters {
        let mut w = op.apply(&v)?;
        let alpha = v.dot(&w);
        w.axpy(-alpha, &v);
        if let Some(prev) = &v_prev {
            w.axpy(-beta_prev, prev);
        }
        basis.push(v.clone());
        alphas.push(alpha);

        // Full reorthogonalization, applied twice ("twice is enough"): keeps
        // the basis orthonormal to round-off and prevents ghost eigenvalues.
        for _ in 0..2 {
            for u in &basis {
                let c = u.dot(&w);
                w.axpy(-c, u);
            }
        }

        let eigs = tridiag_eigenvalues(&alphas, &betas)?;
        extremes = (eigs[0], *eigs.last().expect("at least one step taken"));
        if let Some((lo, hi)) = last_extremes {
            let lo_ok = (extremes.0 - lo).abs() <= tol * extremes.0.abs().max(1.0);
            let hi_ok = (extremes.1 - hi).abs() <= tol * extremes.1.abs().max(1.0);
            if lo_ok && hi_ok {
                converged = true;
                break;
            }
        }
        last_extremes = Some(extremes);

        if basis.len() == n {
            // Krylov space exhausted: the tridiagonal spectrum is exact.
            converged = true;
            break;
        }

        let beta = w.norm();
        let scale = alphas
            .iter()
            .map(|a| a.abs())
            .chain(betas.iter().copied())
            .fold(1.0f64, f64::max);
        if beta <= 1e-12 * scale {
            // Breakdown: an invariant subspace was captured. Record the zero
            // coupling and continue in a fresh orthogonal direction.
            restarts += 1;
            betas.push(0.0);
            beta_prev = 0.0;
            v_prev = None;
            v = random_orthonormal(&basis, n, seed, restarts as u64)
                .expect("basis not full, checked above");
        } else {
            betas.push(beta);
            beta_prev = beta;
            let mut next = w;
            next.scale(1.0 / beta);
            v_prev = Some(v);
            v = next;
        }
    }

    Ok(LanczosResult {
        eigs_min: extremes.0,
        eigs_max: extremes.1,
        iters: alphas.len(),
        converged,
        restarts,
    })
}

/// A seeded random unit vector orthogonalized against `basis`. Returns None
/// only if the basis already spans the space (repeated draws degenerate).
fn random_orthonormal(
    basis: &[FlatVector],
    n: usize,
    seed: u64,
    attempt_tag: u64,
) -> Option<FlatVector> {
    for try_idx in 0..8u64 {
        let mut rng = rng::stream(seed, &[purpose::LANCZOS, attempt_tag, try_idx]);
        let mut v = FlatVector((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        for _ in 0..2 {
            for u in basis {
                let c = u.dot(&v);
                v.axpy(-c, u);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v.scale(1.0 / norm);
            return Some(v);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::spectral::operator::MatrixOperator;

    fn diag_op(values: &[f64]) -> MatrixOperator {
        let n = values.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        MatrixOperator::new(m).unwrap()
    }

    #[test]
    fn known_diagonal_spectrum() {
        let mut op = diag_op(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let r = lanczos_extreme(&mut op, DEFAULT_MAX_ITERS, DEFAULT_TOL, 7).unwrap();
        assert!(r.converged);
        assert!((r.eigs_min - 1.0).abs() < 1e-8, "min {}", r.eigs_min);
        assert!((r.eigs_max - 10.0).abs() < 1e-8, "max {}", r.eigs_max);
    }

    #[test]
    fn identity_converges_in_two_iterations_with_restart() {
        let mut op = diag_op(&[1.0; 6]);
        let r = lanczos_extreme(&mut op, DEFAULT_MAX_ITERS, DEFAULT_TOL, 3).unwrap();
        assert!(r.converged);
        assert!(r.iters <= 2, "iters {}", r.iters);
        assert!((r.eigs_min - 1.0).abs() < 1e-12);
        assert!((r.eigs_max - 1.0).abs() < 1e-12);
        assert!(r.restarts >= 1, "identity forces an immediate breakdown");
    }

    #[test]
    fn indefinite_spectrum_extremes() {
        let mut op = diag_op(&[-5.0, -1.0, 0.0, 2.0, 8.0]);
        let r = lanczos_extreme(&mut op, DEFAULT_MAX_ITERS, 1e-10, 11).unwrap();
        assert!((r.eigs_min + 5.0).abs() < 1e-8);
        assert!((r.eigs_max - 8.0).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_is_reported() {
        // Cap so low the extremes cannot settle: converged must be false.
        let mut op = diag_op(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let r = lanczos_extreme(&mut op, 2, 1e-16, 5).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iters, 2);
    }

    #[test]
    fn rejects_tiny_configs() {
        let mut op = diag_op(&[1.0, 2.0]);
        assert!(lanczos_extreme(&mut op, 1, DEFAULT_TOL, 0).is_err());
        let mut op1 = diag_op(&[1.0]);
        assert!(lanczos_extreme(&mut op1, 10, DEFAULT_TOL, 0).is_err());
    }
}
