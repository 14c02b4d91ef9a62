//! Symmetric curvature operators: the v → H·v contract and its adapters.

use std::collections::BTreeMap;

use crate::autodiff::{eval, hvp, Graph, NodeId, Tensor, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, FlatVector, IndexSet};
use crate::rng::{self, purpose};
use rand::Rng;

/// A symmetric linear operator on flat parameter vectors, applied matrix-free.
///
/// `apply` takes &mut self so implementations can reuse evaluation buffers;
/// the operator itself must stay mathematically fixed across calls.
pub trait CurvatureOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, v: &FlatVector) -> Result<FlatVector>;
}

impl<O: CurvatureOperator + ?Sized> CurvatureOperator for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&mut self, v: &FlatVector) -> Result<FlatVector> {
        (**self).apply(v)
    }
}

// ---------------------------------------------------------------------------
// Explicit-matrix operator
// ---------------------------------------------------------------------------

/// Wraps an explicit symmetric matrix. Used by tests and oracles.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    matrix: DenseMatrix,
}

impl MatrixOperator {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if matrix.rows != matrix.cols {
            return Err(Error::ShapeMismatch {
                context: format!("operator matrix must be square, got {}x{}", matrix.rows, matrix.cols),
            });
        }
        Ok(MatrixOperator { matrix })
    }
}

impl CurvatureOperator for MatrixOperator {
    fn dim(&self) -> usize {
        self.matrix.rows
    }
    fn apply(&mut self, v: &FlatVector) -> Result<FlatVector> {
        if v.dim() != self.matrix.rows {
            return Err(Error::DimMismatch { expected: self.matrix.rows, actual: v.dim() });
        }
        Ok(self.matrix.matvec(v))
    }
}

// ---------------------------------------------------------------------------
// Graph-backed Hessian-vector products
// ---------------------------------------------------------------------------

/// Exact H·v for a scalar loss graph at fixed parameters and data, via double
/// reverse-mode differentiation. One evaluation also yields the loss and
/// gradient at the same point, so diagnostics get all three consistently.
pub struct GraphHvpOperator {
    graph: Graph,
    loss: NodeId,
    grads: Vec<NodeId>,
    hvps: Vec<NodeId>,
    direction_names: Vec<String>,
    /// (rows, cols) of each parameter tensor, in canonical order.
    shapes: Vec<(usize, usize)>,
    dim: usize,
    bindings: BTreeMap<String, Tensor>,
    ws: Workspace,
}

impl GraphHvpOperator {
    /// `param_names` lists the graph's parameter inputs in the canonical flat
    /// order; `params` concatenates their values in that order. `data` binds
    /// every non-parameter input of the graph.
    pub fn new(
        base: &Graph,
        loss: NodeId,
        param_names: &[String],
        params: &FlatVector,
        data: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut targets = Vec::with_capacity(param_names.len());
        let mut shapes = Vec::with_capacity(param_names.len());
        let mut dim = 0;
        for name in param_names {
            let id = base
                .input_id(name)
                .ok_or_else(|| Error::MissingInput { name: name.clone() })?;
            let shape = base.shape(id);
            targets.push(id);
            shapes.push(shape);
            dim += shape.0 * shape.1;
        }
        if params.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, actual: params.dim() });
        }

        let h = hvp(base, loss, &targets)?;

        let mut bindings = data.clone();
        let mut offset = 0;
        for (name, &(r, c)) in param_names.iter().zip(&shapes) {
            let len = r * c;
            let t = Tensor::new(r, c, params.0[offset..offset + len].to_vec())?;
            bindings.insert(name.clone(), t);
            offset += len;
        }
        for (dname, &(r, c)) in h.direction_inputs.iter().zip(&shapes) {
            bindings.insert(dname.clone(), Tensor::zeros(r, c));
        }

        Ok(GraphHvpOperator {
            graph: h.graph,
            loss: h.loss,
            grads: h.grads,
            hvps: h.hvps,
            direction_names: h.direction_inputs,
            shapes,
            dim,
            bindings,
            ws: Workspace::new(),
        })
    }

    fn write_direction(&mut self, v: &FlatVector) {
        let mut offset = 0;
        for (name, &(r, c)) in self.direction_names.iter().zip(&self.shapes) {
            let len = r * c;
            let t = self.bindings.get_mut(name).expect("direction binding present");
            t.data.copy_from_slice(&v.0[offset..offset + len]);
            offset += len;
        }
    }

    fn collect(&self, nodes: &[NodeId]) -> FlatVector {
        let mut out = Vec::with_capacity(self.dim);
        for &id in nodes {
            out.extend_from_slice(&self.ws.value(id).data);
        }
        FlatVector(out)
    }

    /// Loss and gradient at the operator's fixed (params, data) point.
    pub fn loss_and_gradient(&mut self) -> Result<(f64, FlatVector)> {
        let zero = FlatVector::zeros(self.dim);
        self.write_direction(&zero);
        eval(&self.graph, &self.bindings, &mut self.ws)?;
        Ok((self.ws.scalar(self.loss), self.collect(&self.grads.clone())))
    }
}

impl CurvatureOperator for GraphHvpOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, v: &FlatVector) -> Result<FlatVector> {
        if v.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: v.dim() });
        }
        self.write_direction(v);
        eval(&self.graph, &self.bindings, &mut self.ws)?;
        Ok(self.collect(&self.hvps.clone()))
    }
}

// ---------------------------------------------------------------------------
// Group restriction
// ---------------------------------------------------------------------------

/// The principal sub-block of an operator on a set of coordinates: embed the
/// small vector into full space with zeros elsewhere, apply, project back.
/// For a Hessian this is exactly the group's block H_GG.
pub struct Restricted<O: CurvatureOperator> {
    inner: O,
    idx: IndexSet,
    embed: FlatVector,
}

impl<O: CurvatureOperator> Restricted<O> {
    pub fn new(inner: O, idx: &IndexSet) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyGroup { name: "restriction".into() });
        }
        idx.check_bounds(inner.dim())?;
        let embed = FlatVector::zeros(inner.dim());
        Ok(Restricted { inner, idx: idx.clone(), embed })
    }
}

impl<O: CurvatureOperator> CurvatureOperator for Restricted<O> {
    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn apply(&mut self, v: &FlatVector) -> Result<FlatVector> {
        if v.dim() != self.idx.len() {
            return Err(Error::DimMismatch { expected: self.idx.len(), actual: v.dim() });
        }
        self.embed.0.fill(0.0);
        for (k, i) in self.idx.iter().enumerate() {
            self.embed.0[i] = v.0[k];
        }
        let full = self.inner.apply(&self.embed)?;
        Ok(FlatVector(self.idx.iter().map(|i| full.0[i]).collect()))
    }
}

// ---------------------------------------------------------------------------
// Symmetry spot check
// ---------------------------------------------------------------------------

/// Probabilistic check of the symmetry contract: the largest relative defect
/// |⟨Au, v⟩ − ⟨u, Av⟩| / scale over `pairs` random unit pairs.
pub fn symmetry_defect(
    op: &mut dyn CurvatureOperator,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = op.dim();
    let mut worst = 0.0f64;
    for p in 0..pairs {
        let mut rng = rng::stream(seed, &[purpose::PROBE, 0xD1AE, p as u64]);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut v = FlatVector((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
            let norm = v.norm();
            if norm > 0.0 {
                v.scale(1.0 / norm);
            }
            v
        };
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let au = op.apply(&u)?;
        let av = op.apply(&v)?;
        let left = au.dot(&v);
        let right = u.dot(&av);
        let scale = left.abs().max(right.abs()).max(1e-30);
        worst = worst.max((left - right).abs() / scale);
    }
    Ok(worst)
}
