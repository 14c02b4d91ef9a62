//! Full symmetric eigensolver: Householder tridiagonalization followed by
//! implicit-shift QL, eigenvalues only. Classical EISPACK-style routines,
//! adequate and fast for the dimensions the dense guard admits.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Symmetry tolerance used by `exact_spectrum`: inputs with asymmetry above
/// `tol · max(scale, 1)` are rejected rather than silently symmetrized.
pub const DEFAULT_SYM_TOL: f64 = 1e-8;

const MAX_QL_SWEEPS: usize = 50;

/// Eigenvalues (ascending) of a symmetric tridiagonal matrix with diagonal
/// `diag` and subdiagonal `offdiag` (offdiag[i] couples rows i and i+1).
pub fn tridiag_eigenvalues(diag: &[f64], offdiag: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    if offdiag.len() + 1 != n {
        return Err(Error::DimMismatch { expected: n - 1, actual: offdiag.len() });
    }
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    Ok(d)
}

/// Full spectrum of a symmetric dense matrix, ascending.
pub fn exact_spectrum(matrix: &DenseMatrix, sym_tol: f64) -> Result<Vec<f64>> {
    if matrix.rows != matrix.cols {
        return Err(Error::ShapeMismatch {
            context: format!("spectrum needs a square matrix, got {}x{}", matrix.rows, matrix.cols),
        });
    }
    let n = matrix.rows;
    if n == 0 {
        return Ok(vec![]);
    }
    let asym = matrix.max_asymmetry();
    let scale = matrix.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if asym > sym_tol * scale.max(1.0) {
        return Err(Error::NotSymmetric { max_asym: asym, tol: sym_tol });
    }

    let mut work = matrix.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiag(&mut work, &mut d, &mut e);
    // Renumber: after reduction e[i] couples rows i−1 and i; QL wants e[i]
    // coupling i and i+1 with a zero sentinel at the end.
    for i in 0..n - 1 {
        e[i] = e[i + 1];
    }
    e[n - 1] = 0.0;
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    Ok(d)
}

/// Householder reduction of a symmetric matrix to tridiagonal form, values
/// only (no eigenvector accumulation). Reads and writes the lower triangle of
/// `z`; on return d holds the diagonal and e[1..] the subdiagonal.
// Index arithmetic over triangular sub-ranges mirrors the textbook
// formulation; iterator rewrites would obscure it.
#[allow(clippy::needless_range_loop)]
fn householder_tridiag(z: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = z.rows;
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| z.get(i, k).abs()).sum();
            if scale == 0.0 {
                e[i] = z.get(i, l);
            } else {
                let mut h = 0.0;
                for k in 0..=l {
                    let v = z.get(i, k) / scale;
                    z.set(i, k, v);
                    h += v * v;
                }
                let f = z.get(i, l);
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z.set(i, l, f - g);
                let mut f_acc = 0.0;
                for j in 0..=l {
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z.get(j, k) * z.get(i, k);
                    }
                    for k in (j + 1)..=l {
                        g_acc += z.get(k, j) * z.get(i, k);
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z.get(i, j);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = z.get(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let v = z.get(j, k) - (f * e[k] + g * z.get(i, k));
                        z.set(j, k, v);
                    }
                }
            }
        } else {
            e[i] = z.get(i, l);
        }
    }
    e[0] = 0.0;
    // Row i of z stopped receiving similarity updates once the reduction
    // passed it, so the surviving diagonal entries are exactly those of T.
    for i in 0..n {
        d[i] = z.get(i, i);
    }
}

/// Implicit-shift QL on a tridiagonal matrix: d = diagonal, e = subdiagonal
/// with e[i] coupling rows i and i+1 and e[n−1] == 0. Eigenvalues land in d,
/// unsorted.
fn ql_implicit(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            // Find the first decoupling point at or after l.
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_QL_SWEEPS {
                return Err(Error::EigenNoConverge { index: l });
            }
            // Wilkinson-style shift from the leading 2×2.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0;
            let mut i = m - 1;
            loop {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Negligible rotation: deflate early and retry.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if i == l {
                    d[l] -= p;
                    e[l] = g;
                    e[m] = 0.0;
                    break;
                }
                i -= 1;
            }
        }
    }
    Ok(())
}
