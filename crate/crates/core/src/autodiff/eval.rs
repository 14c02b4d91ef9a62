//! Forward evaluation of a graph into a reusable workspace.

use std::collections::BTreeMap;

use super::graph::{Graph, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-graph evaluation buffers. The first evaluation allocates one tensor
/// per node; subsequent evaluations of the same graph reuse them, so hot
/// loops (trace probes, iterative eigensolvers) do no per-call allocation.
#[derive(Debug, Default)]
pub struct Workspace {
    values: Vec<Tensor>,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace::default()
    }

    /// Value of `id` from the most recent evaluation.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.values[id].shape(), (1, 1));
        self.values[id].data[0]
    }

    fn ensure_layout(&mut self, graph: &Graph) {
        if self.values.len() == graph.len()
            && self
                .values
                .iter()
                .zip(graph.nodes())
                .all(|(t, n)| t.shape() == (n.rows, n.cols))
        {
            return;
        }
        self.values = graph
            .nodes()
            .iter()
            .map(|n| Tensor::zeros(n.rows, n.cols))
            .collect();
    }
}

/// Evaluate every node of `graph` under the named-input `bindings`.
///
/// Fails if a named input is missing or has the wrong shape, or if any node
/// produces a non-finite value.
pub fn eval(graph: &Graph, bindings: &BTreeMap<String, Tensor>, ws: &mut Workspace) -> Result<()> {
    ws.ensure_layout(graph);
    for id in 0..graph.len() {
        // Nodes only reference earlier nodes, so split at `id`: everything
        // before is computed, and `rest[0]` is this node's output buffer.
        let (done, rest) = ws.values.split_at_mut(id);
        let out = &mut rest[0];
        let node = graph.node(id);
        compute(&node.op, done, bindings, out, id)?;
        if !out.data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { node: id, op: node.op.name() });
        }
    }
    Ok(())
}

fn compute(
    op: &Op,
    done: &[Tensor],
    bindings: &BTreeMap<String, Tensor>,
    out: &mut Tensor,
    id: NodeId,
) -> Result<()> {
    use Op::*;
    match op {
        Input { name } => {
            let bound = bindings
                .get(name)
                .ok_or_else(|| Error::MissingInput { name: name.clone() })?;
            if bound.shape() != out.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!(
                        "input '{name}' bound as {}x{}, declared {}x{} (node {id})",
                        bound.rows, bound.cols, out.rows, out.cols
                    ),
                });
            }
            out.data.copy_from_slice(&bound.data);
        }
        Const { value } => out.data.copy_from_slice(&value.data),
        MatMul { a, b } => {
            let (x, y) = (&done[*a], &done[*b]);
            let (m, k, n) = (x.rows, x.cols, y.cols);
            out.data.fill(0.0);
            // ikj loop order: the inner loop strides contiguously over y and out.
            for i in 0..m {
                for p in 0..k {
                    let xv = x.data[i * k + p];
                    if xv == 0.0 {
                        continue;
                    }
                    let yrow = &y.data[p * n..(p + 1) * n];
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += xv * yrow[j];
                    }
                }
            }
        }
        Add { a, b } => zip3(&done[*a], &done[*b], out, |x, y| x + y),
        Sub { a, b } => zip3(&done[*a], &done[*b], out, |x, y| x - y),
        Mul { a, b } => zip3(&done[*a], &done[*b], out, |x, y| x * y),
        Div { a, b } => zip3(&done[*a], &done[*b], out, |x, y| x / y),
        Scale { a, c } => map2(&done[*a], out, |x| c * x),
        Tanh { a } => map2(&done[*a], out, |x| x.tanh()),
        Exp { a } => map2(&done[*a], out, |x| x.exp()),
        Ln { a } => map2(&done[*a], out, |x| x.ln()),
        SumAll { a } => out.data[0] = done[*a].data.iter().sum(),
        RowSum { a } => {
            let x = &done[*a];
            for r in 0..x.rows {
                out.data[r] = x.row(r).iter().sum();
            }
        }
        ColSum { a } => {
            let x = &done[*a];
            out.data.fill(0.0);
            for r in 0..x.rows {
                for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
        }
        BroadcastRows { a, rows } => {
            let src = &done[*a].data;
            for r in 0..*rows {
                out.data[r * src.len()..(r + 1) * src.len()].copy_from_slice(src);
            }
        }
        BroadcastCols { a, cols } => {
            let src = &done[*a].data;
            for (r, &v) in src.iter().enumerate() {
                out.data[r * cols..(r + 1) * cols].fill(v);
            }
        }
        BroadcastScalar { a, .. } => out.data.fill(done[*a].data[0]),
        Transpose { a } => {
            let x = &done[*a];
            for r in 0..x.rows {
                for c in 0..x.cols {
                    out.data[c * x.rows + r] = x.data[r * x.cols + c];
                }
            }
        }
        Reshape { a, .. } => out.data.copy_from_slice(&done[*a].data),
        GatherRows { a, indices } => {
            let x = &done[*a];
            let c = x.cols;
            for (i, &src) in indices.iter().enumerate() {
                out.data[i * c..(i + 1) * c].copy_from_slice(x.row(src));
            }
        }
        ScatterRows { a, indices, .. } => {
            let x = &done[*a];
            let c = x.cols;
            out.data.fill(0.0);
            for (i, &dst) in indices.iter().enumerate() {
                let orow = &mut out.data[dst * c..(dst + 1) * c];
                for (o, v) in orow.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
        }
        GatherCols { a, indices } => {
            let x = &done[*a];
            let k = indices.len();
            for r in 0..x.rows {
                let xrow = x.row(r);
                for (j, &src) in indices.iter().enumerate() {
                    out.data[r * k + j] = xrow[src];
                }
            }
        }
        ScatterCols { a, indices, cols } => {
            let x = &done[*a];
            out.data.fill(0.0);
            for r in 0..x.rows {
                let xrow = x.row(r);
                for (j, &dst) in indices.iter().enumerate() {
                    out.data[r * cols + dst] += xrow[j];
                }
            }
        }
        RowMaxDetached { a } => {
            let x = &done[*a];
            for r in 0..x.rows {
                out.data[r] = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    Ok(())
}

fn zip3(a: &Tensor, b: &Tensor, out: &mut Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((o, x), y) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
        *o = f(*x, *y);
    }
}

fn map2(a: &Tensor, out: &mut Tensor, f: impl Fn(f64) -> f64) {
    for (o, x) in out.data.iter_mut().zip(&a.data) {
        *o = f(*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    #[test]
    fn matmul_small_case() {
        let mut g = Graph::new();
        let a = g.input("a", 2, 3).unwrap();
        let b = g.input("b", 3, 2).unwrap();
        let m = g.matmul(a, b).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[
            ("a", Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()),
            ("b", Tensor::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap()),
        ]);
        eval(&g, &bindings, &mut ws).unwrap();
        assert_eq!(ws.value(m).data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn missing_input_is_reported_by_name() {
        let mut g = Graph::new();
        g.input("present", 1, 1).unwrap();
        let mut ws = Workspace::new();
        let err = eval(&g, &BTreeMap::new(), &mut ws).unwrap_err();
        match err {
            Error::MissingInput { name } => assert_eq!(name, "present"),
            other => panic!("expected MissingInput, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_caught_with_location() {
        let mut g = Graph::new();
        let x = g.input("x", 1, 1).unwrap();
        let l = g.ln(x).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[("x", Tensor::scalar(-1.0))]);
        let err = eval(&g, &bindings, &mut ws).unwrap_err();
        match err {
            Error::NonFinite { node, op } => {
                assert_eq!(node, l);
                assert_eq!(op, "ln");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_are_normalized_and_stable() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 3).unwrap();
        let s = g.softmax_rows(x).unwrap();
        let mut ws = Workspace::new();
        // Second row has entries around 1000: unshifted exp would overflow.
        let bindings = bind(&[(
            "x",
            Tensor::new(2, 3, vec![0.0, 1.0, 2.0, 1000.0, 1001.0, 1002.0]).unwrap(),
        )]);
        eval(&g, &bindings, &mut ws).unwrap();
        let v = ws.value(s);
        for r in 0..2 {
            let sum: f64 = v.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
        }
        // Both rows have the same within-row differences, so identical softmax.
        for c in 0..3 {
            assert!((v.get(0, c) - v.get(1, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_matches_direct_formula_in_safe_range() {
        let mut g = Graph::new();
        let x = g.input("x", 1, 3).unwrap();
        let l = g.logsumexp_rows(x).unwrap();
        let mut ws = Workspace::new();
        let vals = [0.3, -1.2, 0.9];
        let bindings = bind(&[("x", Tensor::new(1, 3, vals.to_vec()).unwrap())]);
        eval(&g, &bindings, &mut ws).unwrap();
        let direct = vals.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((ws.scalar(l) - direct).abs() < 1e-14);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let mut g = Graph::new();
        let a = g.input("a", 3, 2).unwrap();
        let picked = g.gather_rows(a, vec![2, 2, 0]).unwrap();
        let spread = g.scatter_rows(picked, vec![2, 2, 0], 3).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[(
            "a",
            Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        )]);
        eval(&g, &bindings, &mut ws).unwrap();
        // Row 2 was gathered twice, so the scatter adds it back doubled.
        assert_eq!(ws.value(spread).data, vec![1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
    }
}
