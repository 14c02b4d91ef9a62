//! Flat parameter vectors, dense matrices, and index selections.

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// FlatVector
// ---------------------------------------------------------------------------

/// A parameter-space vector: all model parameters flattened in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector(pub Vec<f64>);

impl FlatVector {
    pub fn zeros(dim: usize) -> Self {
        FlatVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &FlatVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot: dimension mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Euclidean norm of the components selected by `idx`.
    pub fn restricted_norm(&self, idx: &IndexSet) -> f64 {
        idx.iter().map(|i| self.0[i] * self.0[i]).sum::<f64>().sqrt()
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &FlatVector) {
        assert_eq!(self.dim(), other.dim(), "axpy: dimension mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.0 {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for FlatVector {
    fn from(v: Vec<f64>) -> Self {
        FlatVector(v)
    }
}

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix. Used for explicit Hessians and interaction tables,
/// all of which are small (dimension is guarded upstream).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, v: &FlatVector) -> FlatVector {
        assert_eq!(self.cols, v.dim(), "matvec: dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (r, out_r) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *out_r = row.iter().zip(&v.0).map(|(a, b)| a * b).sum();
        }
        FlatVector(out)
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace: matrix must be square");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute off-diagonal asymmetry |m_ij - m_ji|.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "asymmetry: matrix must be square");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replace self with (M + Mᵀ)/2 and return the pre-symmetrization
    /// asymmetry, so callers can report how non-symmetric the input was.
    pub fn symmetrize(&mut self) -> f64 {
        let asym = self.max_asymmetry();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
        asym
    }

    /// Extract the square sub-block indexed by `idx` (rows and columns).
    pub fn sub_block(&self, idx: &IndexSet) -> DenseMatrix {
        let k = idx.len();
        let mut out = DenseMatrix::zeros(k, k);
        for (a, &i) in idx.as_slice().iter().enumerate() {
            for (b, &j) in idx.as_slice().iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// IndexSet
// ---------------------------------------------------------------------------

/// A sorted, duplicate-free set of flat parameter indices.
///
/// Construction enforces the invariants once so downstream code (restriction,
/// sub-block extraction, masked perturbation) can rely on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(Error::OverlappingSelection { index: w[0] });
            }
        }
        Ok(IndexSet(indices))
    }

    /// Contiguous range [start, start+len).
    pub fn range(start: usize, len: usize) -> Self {
        IndexSet((start..start + len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Check that every index is below `dim`.
    pub fn check_bounds(&self, dim: usize) -> Result<()> {
        if let Some(&last) = self.0.last() {
            if last >= dim {
                return Err(Error::IndexOutOfRange {
                    context: format!("selection index {last} >= parameter dimension {dim}"),
                });
            }
        }
        Ok(())
    }

    /// True if the two selections share any index.
    pub fn intersects(&self, other: &IndexSet) -> bool {
        // Both sorted: linear merge scan.
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}
