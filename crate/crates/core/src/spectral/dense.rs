//! Dense-Hessian oracle: materialize an operator column by column.

use super::operator::CurvatureOperator;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, FlatVector};

/// Hard ceiling on the dimension for explicit materialization.
pub const DENSE_DIM_GUARD: usize = 2000;

/// Apply the operator to every basis vector and symmetrize the result.
///
/// Column j is op(e_j). A Hessian operator is symmetric up to round-off, so
/// the output is (M + Mᵀ)/2; the pre-symmetrization asymmetry is returned so
/// callers can assert it is round-off-sized, not a bug.
pub fn dense_hessian(
    op: &mut dyn CurvatureOperator,
    guard: usize,
) -> Result<(DenseMatrix, f64)> {
    let n = op.dim();
    if n > guard {
        return Err(Error::DimGuard { dim: n, guard });
    }
    let mut m = DenseMatrix::zeros(n, n);
    let mut e = FlatVector::zeros(n);
    for j in 0..n {
        e.0[j] = 1.0;
        let col = op.apply(&e)?;
        e.0[j] = 0.0;
        for i in 0..n {
            m.set(i, j, col.0[i]);
        }
    }
    let asym = m.symmetrize();
    Ok((m, asym))
}
