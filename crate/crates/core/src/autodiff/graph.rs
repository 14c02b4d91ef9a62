//! Static computation graphs over 2-D tensors.
//!
//! A graph is an append-only list of nodes; node ids are indices and every
//! node's inputs precede it, so node order is already a topological order.
//! Shapes are fixed at construction time and every builder validates them,
//! so shape errors surface where the graph is built, not during a run.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

/// The primitive operation set. It is closed under differentiation: the
/// vector-Jacobian product of every op is expressible with these same ops,
/// which is what lets one reverse pass be applied to its own output graph
/// to obtain Hessian-vector products.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Named leaf bound at evaluation time (parameter or data).
    Input { name: String },
    /// Constant tensor baked into the graph.
    Const { value: Tensor },
    /// Matrix product a·b.
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise a + b (shapes must match exactly; broadcasting is explicit).
    Add { a: NodeId, b: NodeId },
    /// Elementwise a - b.
    Sub { a: NodeId, b: NodeId },
    /// Elementwise (Hadamard) a ⊙ b.
    Mul { a: NodeId, b: NodeId },
    /// Elementwise a / b.
    Div { a: NodeId, b: NodeId },
    /// Constant scalar multiple c·a.
    Scale { a: NodeId, c: f64 },
    /// Elementwise tanh.
    Tanh { a: NodeId },
    /// Elementwise exp.
    Exp { a: NodeId },
    /// Elementwise natural log.
    Ln { a: NodeId },
    /// Sum of all entries → 1×1.
    SumAll { a: NodeId },
    /// Per-row sum: r×c → r×1.
    RowSum { a: NodeId },
    /// Per-column sum: r×c → 1×c.
    ColSum { a: NodeId },
    /// Repeat a 1×c row vector down `rows` rows.
    BroadcastRows { a: NodeId, rows: usize },
    /// Repeat an r×1 column vector across `cols` columns.
    BroadcastCols { a: NodeId, cols: usize },
    /// Fill an rows×cols tensor with a 1×1 scalar.
    BroadcastScalar { a: NodeId, rows: usize, cols: usize },
    /// Matrix transpose.
    Transpose { a: NodeId },
    /// Reinterpret the row-major element sequence under a new shape
    /// (element count preserved). Groups flattened per-token scores into
    /// per-segment rows so row-wise ops can act within segments.
    Reshape { a: NodeId, rows: usize, cols: usize },
    /// Select rows by index (duplicates allowed): out row i = a row idx[i].
    GatherRows { a: NodeId, indices: Vec<usize> },
    /// Add-scatter rows into a zero r×c tensor: out[idx[i]] += a row i.
    ScatterRows { a: NodeId, indices: Vec<usize>, rows: usize },
    /// Select columns by index: out col j = a col idx[j].
    GatherCols { a: NodeId, indices: Vec<usize> },
    /// Add-scatter columns into a zero r×c tensor: out[:, idx[j]] += a col j.
    ScatterCols { a: NodeId, indices: Vec<usize>, cols: usize },
    /// Per-row maximum, treated as a constant by differentiation.
    ///
    /// This is the numerically-stable shift for softmax/log-sum-exp: because
    /// those functions' derivatives of every order depend only on differences
    /// within a row, subtracting a detached row max is exact, not an
    /// approximation.
    RowMaxDetached { a: NodeId },
}

impl Op {
    /// Ids of this op's graph inputs, in argument order.
    pub fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input { .. } | Const { .. } => vec![],
            MatMul { a, b } | Add { a, b } | Sub { a, b } | Mul { a, b } | Div { a, b } => {
                vec![*a, *b]
            }
            Scale { a, .. }
            | Tanh { a }
            | Exp { a }
            | Ln { a }
            | SumAll { a }
            | RowSum { a }
            | ColSum { a }
            | BroadcastRows { a, .. }
            | BroadcastCols { a, .. }
            | BroadcastScalar { a, .. }
            | Transpose { a }
            | Reshape { a, .. }
            | GatherRows { a, .. }
            | ScatterRows { a, .. }
            | GatherCols { a, .. }
            | ScatterCols { a, .. }
            | RowMaxDetached { a } => vec![*a],
        }
    }

    /// Rewrite this op's input ids through `f` (used when rebuilding graphs).
    fn map_inputs(&mut self, f: impl Fn(NodeId) -> NodeId) {
        use Op::*;
        match self {
            Input { .. } | Const { .. } => {}
            MatMul { a, b } | Add { a, b } | Sub { a, b } | Mul { a, b } | Div { a, b } => {
                *a = f(*a);
                *b = f(*b);
            }
            Scale { a, .. }
            | Tanh { a }
            | Exp { a }
            | Ln { a }
            | SumAll { a }
            | RowSum { a }
            | ColSum { a }
            | BroadcastRows { a, .. }
            | BroadcastCols { a, .. }
            | BroadcastScalar { a, .. }
            | Transpose { a }
            | Reshape { a, .. }
            | GatherRows { a, .. }
            | ScatterRows { a, .. }
            | GatherCols { a, .. }
            | ScatterCols { a, .. }
            | RowMaxDetached { a } => *a = f(*a),
        }
    }

    /// Short name for diagnostics.
    pub fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Input { .. } => "input",
            Const { .. } => "const",
            MatMul { .. } => "matmul",
            Add { .. } => "add",
            Sub { .. } => "sub",
            Mul { .. } => "mul",
            Div { .. } => "div",
            Scale { .. } => "scale",
            Tanh { .. } => "tanh",
            Exp { .. } => "exp",
            Ln { .. } => "ln",
            SumAll { .. } => "sum_all",
            RowSum { .. } => "row_sum",
            ColSum { .. } => "col_sum",
            BroadcastRows { .. } => "broadcast_rows",
            BroadcastCols { .. } => "broadcast_cols",
            BroadcastScalar { .. } => "broadcast_scalar",
            Transpose { .. } => "transpose",
            Reshape { .. } => "reshape",
            GatherRows { .. } => "gather_rows",
            ScatterRows { .. } => "scatter_rows",
            GatherCols { .. } => "gather_cols",
            ScatterCols { .. } => "scatter_cols",
            RowMaxDetached { .. } => "row_max_detached",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub rows: usize,
    pub cols: usize,
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Named leaves, in name order for deterministic iteration.
    inputs: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    /// Named inputs as (name, id), sorted by name.
    pub fn input_bindings(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.inputs.iter().map(|(n, id)| (n.as_str(), *id))
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> NodeId {
        self.nodes.push(Node { op, rows, cols });
        self.nodes.len() - 1
    }

    fn check_id(&self, id: NodeId, role: &str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::IndexOutOfRange {
                context: format!("{role} node id {id} >= graph length {}", self.nodes.len()),
            });
        }
        Ok(())
    }

    // -- leaves --------------------------------------------------------------

    pub fn input(&mut self, name: &str, rows: usize, cols: usize) -> Result<NodeId> {
        if self.inputs.contains_key(name) {
            return Err(Error::InvalidConfig {
                field: "input".into(),
                message: format!("duplicate input name '{name}'"),
            });
        }
        let id = self.push(Op::Input { name: name.to_string() }, rows, cols);
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let (rows, cols) = value.shape();
        self.push(Op::Const { value }, rows, cols)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    // -- binary ops ----------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a, "matmul lhs")?;
        self.check_id(b, "matmul rhs")?;
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::ShapeMismatch {
                context: format!("matmul {ar}x{ac} · {br}x{bc}: inner dimensions differ"),
            });
        }
        Ok(self.push(Op::MatMul { a, b }, ar, bc))
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, label: &str) -> Result<(usize, usize)> {
        self.check_id(a, label)?;
        self.check_id(b, label)?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "{label} {}x{} vs {}x{}: elementwise shapes must match",
                    sa.0, sa.1, sb.0, sb.1
                ),
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.elementwise(a, b, "add")?;
        Ok(self.push(Op::Add { a, b }, r, c))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.elementwise(a, b, "sub")?;
        Ok(self.push(Op::Sub { a, b }, r, c))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.elementwise(a, b, "mul")?;
        Ok(self.push(Op::Mul { a, b }, r, c))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.elementwise(a, b, "div")?;
        Ok(self.push(Op::Div { a, b }, r, c))
    }

    // -- unary ops -----------------------------------------------------------

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(a, "scale")?;
        let (r, k) = self.shape(a);
        Ok(self.push(Op::Scale { a, c }, r, k))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "tanh")?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Tanh { a }, r, c))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "exp")?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Exp { a }, r, c))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "ln")?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Ln { a }, r, c))
    }

    // -- reductions and broadcasts -------------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "sum_all")?;
        Ok(self.push(Op::SumAll { a }, 1, 1))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "row_sum")?;
        let (r, _) = self.shape(a);
        Ok(self.push(Op::RowSum { a }, r, 1))
    }

    pub fn col_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "col_sum")?;
        let (_, c) = self.shape(a);
        Ok(self.push(Op::ColSum { a }, 1, c))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.check_id(a, "broadcast_rows")?;
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::ShapeMismatch {
                context: format!("broadcast_rows expects a 1xC input, got {r}x{c}"),
            });
        }
        Ok(self.push(Op::BroadcastRows { a, rows }, rows, c))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        self.check_id(a, "broadcast_cols")?;
        let (r, c) = self.shape(a);
        if c != 1 {
            return Err(Error::ShapeMismatch {
                context: format!("broadcast_cols expects an Rx1 input, got {r}x{c}"),
            });
        }
        Ok(self.push(Op::BroadcastCols { a, cols }, r, cols))
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check_id(a, "broadcast_scalar")?;
        let (r, c) = self.shape(a);
        if (r, c) != (1, 1) {
            return Err(Error::ShapeMismatch {
                context: format!("broadcast_scalar expects a 1x1 input, got {r}x{c}"),
            });
        }
        Ok(self.push(Op::BroadcastScalar { a, rows, cols }, rows, cols))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "transpose")?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Transpose { a }, c, r))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check_id(a, "reshape")?;
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::ShapeMismatch {
                context: format!("reshape {r}x{c} -> {rows}x{cols}: element counts differ"),
            });
        }
        Ok(self.push(Op::Reshape { a, rows, cols }, rows, cols))
    }

    // -- gather / scatter ------------------------------------------------------

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.check_id(a, "gather_rows")?;
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::IndexOutOfRange {
                context: format!("gather_rows index {bad} >= {r} rows"),
            });
        }
        let k = indices.len();
        Ok(self.push(Op::GatherRows { a, indices }, k, c))
    }

    pub fn scatter_rows(&mut self, a: NodeId, indices: Vec<usize>, rows: usize) -> Result<NodeId> {
        self.check_id(a, "scatter_rows")?;
        let (k, c) = self.shape(a);
        if indices.len() != k {
            return Err(Error::ShapeMismatch {
                context: format!("scatter_rows: {} indices for {k} input rows", indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange {
                context: format!("scatter_rows index {bad} >= {rows} rows"),
            });
        }
        Ok(self.push(Op::ScatterRows { a, indices, rows }, rows, c))
    }

    pub fn gather_cols(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.check_id(a, "gather_cols")?;
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::IndexOutOfRange {
                context: format!("gather_cols index {bad} >= {c} columns"),
            });
        }
        let k = indices.len();
        Ok(self.push(Op::GatherCols { a, indices }, r, k))
    }

    pub fn scatter_cols(&mut self, a: NodeId, indices: Vec<usize>, cols: usize) -> Result<NodeId> {
        self.check_id(a, "scatter_cols")?;
        let (r, k) = self.shape(a);
        if indices.len() != k {
            return Err(Error::ShapeMismatch {
                context: format!("scatter_cols: {} indices for {k} input columns", indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::IndexOutOfRange {
                context: format!("scatter_cols index {bad} >= {cols} columns"),
            });
        }
        Ok(self.push(Op::ScatterCols { a, indices, cols }, r, cols))
    }

    pub fn row_max_detached(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a, "row_max_detached")?;
        let (r, _) = self.shape(a);
        Ok(self.push(Op::RowMaxDetached { a }, r, 1))
    }

    // -- pruning ---------------------------------------------------------------

    /// Rebuild the graph keeping only `keep` and the nodes they depend on.
    ///
    /// Differentiation appends adjoint chains for every leaf, including data
    /// inputs nobody asked about; pruning afterwards keeps evaluation cost
    /// proportional to what is actually used. Returns the new graph and the
    /// remapped ids of `keep` (same order).
    pub fn pruned(&self, keep: &[NodeId]) -> (Graph, Vec<NodeId>) {
        let mut marked = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = keep.to_vec();
        while let Some(id) = stack.pop() {
            if marked[id] {
                continue;
            }
            marked[id] = true;
            stack.extend(self.nodes[id].op.inputs());
        }
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut out = Graph::new();
        for id in 0..self.nodes.len() {
            if !marked[id] {
                continue;
            }
            let node = &self.nodes[id];
            let mut op = node.op.clone();
            op.map_inputs(|j| map[j]);
            if let Op::Input { name } = &op {
                out.inputs.insert(name.clone(), out.nodes.len());
            }
            map[id] = out.nodes.len();
            out.nodes.push(Node { op, rows: node.rows, cols: node.cols });
        }
        (out, keep.iter().map(|&k| map[k]).collect())
    }

    // -- composites ------------------------------------------------------------
    //
    // These are pure sugar over the primitives above. They get no custom
    // derivative rules: differentiating through the composition is exact and
    // keeps the reverse pass a single mechanism.

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, c) = self.shape(x);
        let m = self.row_max_detached(x)?;
        let mb = self.broadcast_cols(m, c)?;
        let shifted = self.sub(x, mb)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        let sb = self.broadcast_cols(s, c)?;
        self.div(e, sb)
    }

    /// Numerically stable log-sum-exp of each row: r×c → r×1.
    ///
    /// lse(x) = m + ln Σ exp(x − m) holds exactly for any shift m, and with a
    /// detached m its derivatives are the true ones to every order.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, c) = self.shape(x);
        let m = self.row_max_detached(x)?;
        let mb = self.broadcast_cols(m, c)?;
        let shifted = self.sub(x, mb)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        let ls = self.ln(s)?;
        self.add(m, ls)
    }

    /// Mean of all entries → 1×1.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Mean cross-entropy between per-row logits and per-row target
    /// distributions (one-hot or soft): −(1/n) Σ_rows Σ_j y_j (x_j − lse(x)).
    pub fn cross_entropy_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let (n, c) = self.shape(logits);
        let (tn, tc) = self.shape(targets);
        if (n, c) != (tn, tc) {
            return Err(Error::ShapeMismatch {
                context: format!("cross entropy: logits {n}x{c} vs targets {tn}x{tc}"),
            });
        }
        let lse = self.logsumexp_rows(logits)?; // n×1
        let yx = self.mul(targets, logits)?;
        let dot = self.row_sum(yx)?; // n×1
        let per_row = self.sub(lse, dot)?; // n×1
        let total = self.sum_all(per_row)?;
        self.scale(total, 1.0 / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_checks_inner_dims() {
        let mut g = Graph::new();
        let a = g.input("a", 2, 3).unwrap();
        let b = g.input("b", 4, 2).unwrap();
        assert!(g.matmul(a, b).is_err());
        let c = g.input("c", 3, 5).unwrap();
        let m = g.matmul(a, c).unwrap();
        assert_eq!(g.shape(m), (2, 5));
    }

    #[test]
    fn elementwise_requires_exact_shapes() {
        let mut g = Graph::new();
        let a = g.input("a", 2, 3).unwrap();
        let b = g.input("b", 3, 2).unwrap();
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn duplicate_input_names_rejected() {
        let mut g = Graph::new();
        g.input("w", 1, 1).unwrap();
        assert!(g.input("w", 2, 2).is_err());
    }

    #[test]
    fn gather_rows_validates_indices() {
        let mut g = Graph::new();
        let a = g.input("a", 3, 2).unwrap();
        assert!(g.gather_rows(a, vec![0, 3]).is_err());
        let picked = g.gather_rows(a, vec![2, 0, 2]).unwrap();
        assert_eq!(g.shape(picked), (3, 2));
    }

    #[test]
    fn reshape_preserves_element_count() {
        let mut g = Graph::new();
        let a = g.input("a", 6, 1).unwrap();
        let r = g.reshape(a, 2, 3).unwrap();
        assert_eq!(g.shape(r), (2, 3));
        assert!(g.reshape(a, 2, 4).is_err());
    }

    #[test]
    fn softmax_shape_preserved() {
        let mut g = Graph::new();
        let x = g.input("x", 4, 7).unwrap();
        let s = g.softmax_rows(x).unwrap();
        assert_eq!(g.shape(s), (4, 7));
    }
}
