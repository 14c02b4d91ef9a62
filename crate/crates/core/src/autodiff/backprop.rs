//! Reverse-mode differentiation as a graph-to-graph transformation.
//!
//! `gradient` clones a graph and appends the nodes that compute adjoints, so
//! the result is itself an ordinary graph. Applying `gradient` to a gradient
//! graph yields exact Hessian-vector products (`hvp`): one differentiation
//! mechanism, used twice, with no second-derivative rules anywhere.

use super::graph::{Graph, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Append adjoint nodes for `d(output)/d(target)` to a clone of `base`.
///
/// `output` must be 1×1. Targets may be any nodes; a target the output does
/// not depend on gets a zero-constant gradient. Returns the extended graph
/// and one gradient node per target, in target order.
pub fn gradient(base: &Graph, output: NodeId, targets: &[NodeId]) -> Result<(Graph, Vec<NodeId>)> {
    let n = base.len();
    if output >= n {
        return Err(Error::IndexOutOfRange {
            context: format!("gradient output node {output} >= graph length {n}"),
        });
    }
    if base.shape(output) != (1, 1) {
        let (r, c) = base.shape(output);
        return Err(Error::ShapeMismatch {
            context: format!("gradient output must be a 1x1 scalar, got {r}x{c}"),
        });
    }
    for &t in targets {
        if t >= n {
            return Err(Error::IndexOutOfRange {
                context: format!("gradient target node {t} >= graph length {n}"),
            });
        }
    }

    let mut g = base.clone();

    // A node is "touched" if it transitively depends on some target. Adjoints
    // are only propagated into touched nodes: chains that cannot reach any
    // target (e.g. adjoints of data inputs) are never built.
    let mut touched = vec![false; n];
    for &t in targets {
        touched[t] = true;
    }
    for i in 0..n {
        if !touched[i] && base.node(i).op.inputs().iter().any(|&j| touched[j]) {
            touched[i] = true;
        }
    }

    let mut adj: Vec<Option<NodeId>> = vec![None; n];
    if touched[output] {
        adj[output] = Some(g.scalar_const(1.0));
        // Consumers of node i all have larger ids, so by the time the reverse
        // walk reaches i its adjoint is fully accumulated.
        for i in (0..n).rev() {
            if !touched[i] {
                continue;
            }
            let Some(gi) = adj[i] else { continue };
            propagate(&mut g, base, i, gi, &mut adj, &touched)?;
        }
    }

    let mut grads = Vec::with_capacity(targets.len());
    for &t in targets {
        grads.push(match adj[t] {
            Some(id) => id,
            None => {
                let (r, c) = base.shape(t);
                g.constant(Tensor::zeros(r, c))
            }
        });
    }
    Ok((g, grads))
}

/// Accumulate `contrib` into the adjoint of node `j`.
fn accum(g: &mut Graph, adj: &mut [Option<NodeId>], j: NodeId, contrib: NodeId) -> Result<()> {
    adj[j] = Some(match adj[j] {
        None => contrib,
        Some(prev) => g.add(prev, contrib)?,
    });
    Ok(())
}

/// Emit the vector-Jacobian product of node `i` (adjoint `gi`) into its inputs.
fn propagate(
    g: &mut Graph,
    base: &Graph,
    i: NodeId,
    gi: NodeId,
    adj: &mut [Option<NodeId>],
    touched: &[bool],
) -> Result<()> {
    match base.node(i).op.clone() {
        Op::Input { .. } | Op::Const { .. } => {}
        // RowMaxDetached deliberately blocks gradient flow; see its definition.
        Op::RowMaxDetached { .. } => {}
        Op::MatMul { a, b } => {
            if touched[a] {
                let bt = g.transpose(b)?;
                let da = g.matmul(gi, bt)?;
                accum(g, adj, a, da)?;
            }
            if touched[b] {
                let at = g.transpose(a)?;
                let db = g.matmul(at, gi)?;
                accum(g, adj, b, db)?;
            }
        }
        Op::Add { a, b } => {
            if touched[a] {
                accum(g, adj, a, gi)?;
            }
            if touched[b] {
                accum(g, adj, b, gi)?;
            }
        }
        Op::Sub { a, b } => {
            if touched[a] {
                accum(g, adj, a, gi)?;
            }
            if touched[b] {
                let neg = g.scale(gi, -1.0)?;
                accum(g, adj, b, neg)?;
            }
        }
        Op::Mul { a, b } => {
            if touched[a] {
                let da = g.mul(gi, b)?;
                accum(g, adj, a, da)?;
            }
            if touched[b] {
                let db = g.mul(gi, a)?;
                accum(g, adj, b, db)?;
            }
        }
        Op::Div { a, b } => {
            // out = a/b; d/da = g/b, d/db = -(g/b)⊙out.
            let t = g.div(gi, b)?;
            if touched[a] {
                accum(g, adj, a, t)?;
            }
            if touched[b] {
                let tm = g.mul(t, i)?;
                let db = g.scale(tm, -1.0)?;
                accum(g, adj, b, db)?;
            }
        }
        Op::Scale { a, c } => {
            if touched[a] {
                let da = g.scale(gi, c)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::Tanh { a } => {
            if touched[a] {
                // g·(1 − tanh²) = g − (g·out)·out, reusing the forward value.
                let gt = g.mul(gi, i)?;
                let gtt = g.mul(gt, i)?;
                let da = g.sub(gi, gtt)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::Exp { a } => {
            if touched[a] {
                let da = g.mul(gi, i)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::Ln { a } => {
            if touched[a] {
                let da = g.div(gi, a)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::SumAll { a } => {
            if touched[a] {
                let (r, c) = base.shape(a);
                let da = g.broadcast_scalar(gi, r, c)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::RowSum { a } => {
            if touched[a] {
                let (_, c) = base.shape(a);
                let da = g.broadcast_cols(gi, c)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::ColSum { a } => {
            if touched[a] {
                let (r, _) = base.shape(a);
                let da = g.broadcast_rows(gi, r)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::BroadcastRows { a, .. } => {
            if touched[a] {
                let da = g.col_sum(gi)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::BroadcastCols { a, .. } => {
            if touched[a] {
                let da = g.row_sum(gi)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::BroadcastScalar { a, .. } => {
            if touched[a] {
                let da = g.sum_all(gi)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::Transpose { a } => {
            if touched[a] {
                let da = g.transpose(gi)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::Reshape { a, .. } => {
            if touched[a] {
                let (r, c) = base.shape(a);
                let da = g.reshape(gi, r, c)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::GatherRows { a, indices } => {
            if touched[a] {
                let (r, _) = base.shape(a);
                let da = g.scatter_rows(gi, indices, r)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::ScatterRows { a, indices, .. } => {
            if touched[a] {
                let da = g.gather_rows(gi, indices)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::GatherCols { a, indices } => {
            if touched[a] {
                let (_, c) = base.shape(a);
                let da = g.scatter_cols(gi, indices, c)?;
                accum(g, adj, a, da)?;
            }
        }
        Op::ScatterCols { a, indices, .. } => {
            if touched[a] {
                let da = g.gather_cols(gi, indices)?;
                accum(g, adj, a, da)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hessian-vector products by double reverse
// ---------------------------------------------------------------------------

/// A graph computing loss, gradient, and exact Hessian-vector products.
#[derive(Debug, Clone)]
pub struct HvpGraph {
    pub graph: Graph,
    /// The (remapped) scalar loss node.
    pub loss: NodeId,
    /// Gradient nodes, one per target, in target order.
    pub grads: Vec<NodeId>,
    /// Hessian-vector product nodes, one per target, in target order.
    pub hvps: Vec<NodeId>,
    /// Names of the direction inputs to bind (aligned with targets).
    pub direction_inputs: Vec<String>,
}

/// Build a graph computing `H·v` for the Hessian of `loss` with respect to
/// the parameter inputs `targets`.
///
/// Construction: differentiate once to get gradient nodes g_k; introduce
/// fresh direction inputs v_k and form the scalar s = Σ_k ⟨g_k, v_k⟩; then
/// differentiate s with respect to the same targets. Because s is linear in
/// v, ∂s/∂θ = H·v exactly. Direction inputs are named `__dir{k}`; that prefix
/// is reserved.
pub fn hvp(base: &Graph, loss: NodeId, targets: &[NodeId]) -> Result<HvpGraph> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig {
            field: "targets".into(),
            message: "hessian-vector product needs at least one target".into(),
        });
    }
    for &t in targets {
        if !matches!(base.node(t).op, Op::Input { .. }) {
            return Err(Error::InvalidConfig {
                field: "targets".into(),
                message: format!(
                    "hvp target node {t} is {}, but targets must be named inputs",
                    base.node(t).op.name()
                ),
            });
        }
    }

    let (mut g1, grads) = gradient(base, loss, targets)?;

    let mut direction_inputs = Vec::with_capacity(targets.len());
    let mut dot: Option<NodeId> = None;
    for (k, (&t, &gn)) in targets.iter().zip(&grads).enumerate() {
        let (r, c) = g1.shape(t);
        let name = format!("__dir{k}");
        let v = g1.input(&name, r, c)?;
        direction_inputs.push(name);
        let prod = g1.mul(gn, v)?;
        let s = g1.sum_all(prod)?;
        dot = Some(match dot {
            None => s,
            Some(d) => g1.add(d, s)?,
        });
    }
    let dot = dot.expect("targets checked non-empty");

    let (g2, hvps) = gradient(&g1, dot, targets)?;

    // Keep loss, gradient, and hvp outputs; drop everything else (notably the
    // adjoint-of-adjoint scaffolding that nothing references).
    let mut keep = Vec::with_capacity(1 + grads.len() + hvps.len());
    keep.push(loss);
    keep.extend(&grads);
    keep.extend(&hvps);
    let (graph, remapped) = g2.pruned(&keep);

    let loss = remapped[0];
    let grads = remapped[1..1 + grads.len()].to_vec();
    let hvps = remapped[1 + grads.len()..].to_vec();
    Ok(HvpGraph { graph, loss, grads, hvps, direction_inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::eval::{eval, Workspace};
    use std::collections::BTreeMap;

    fn bind(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    /// L = ½‖θ‖² has gradient θ itself.
    #[test]
    fn gradient_of_half_squared_norm_is_identity() {
        let mut g = Graph::new();
        let theta = g.input("theta", 2, 1).unwrap();
        let sq = g.mul(theta, theta).unwrap();
        let s = g.sum_all(sq).unwrap();
        let loss = g.scale(s, 0.5).unwrap();

        let (gg, grads) = gradient(&g, loss, &[theta]).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[("theta", Tensor::column(&[3.0, 4.0]))]);
        eval(&gg, &bindings, &mut ws).unwrap();
        assert_eq!(ws.scalar(loss), 12.5);
        assert_eq!(ws.value(grads[0]).data, vec![3.0, 4.0]);
    }

    /// L = θ₁·θ₂ at (2, 5) has gradient (5, 2); exercises gather adjoints.
    #[test]
    fn gradient_of_bilinear_product_swaps_components() {
        let mut g = Graph::new();
        let theta = g.input("theta", 2, 1).unwrap();
        let t0 = g.gather_rows(theta, vec![0]).unwrap();
        let t1 = g.gather_rows(theta, vec![1]).unwrap();
        let loss = g.mul(t0, t1).unwrap();

        let (gg, grads) = gradient(&g, loss, &[theta]).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[("theta", Tensor::column(&[2.0, 5.0]))]);
        eval(&gg, &bindings, &mut ws).unwrap();
        assert_eq!(ws.scalar(loss), 10.0);
        assert_eq!(ws.value(grads[0]).data, vec![5.0, 2.0]);
    }

    #[test]
    fn untouched_target_gets_zero_gradient() {
        let mut g = Graph::new();
        let used = g.input("used", 1, 1).unwrap();
        let unused = g.input("unused", 3, 1).unwrap();
        let loss = g.mul(used, used).unwrap();
        let (gg, grads) = gradient(&g, loss, &[used, unused]).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[
            ("used", Tensor::scalar(2.0)),
            ("unused", Tensor::column(&[1.0, 1.0, 1.0])),
        ]);
        eval(&gg, &bindings, &mut ws).unwrap();
        assert_eq!(ws.value(grads[0]).data, vec![4.0]);
        assert_eq!(ws.value(grads[1]).data, vec![0.0; 3]);
    }

    #[test]
    fn gradient_requires_scalar_output() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 2).unwrap();
        let y = g.tanh(x).unwrap();
        assert!(gradient(&g, y, &[x]).is_err());
    }

    /// Gradient of log-sum-exp is softmax — checks the detached-max shift
    /// produces exact derivatives, not approximations.
    #[test]
    fn logsumexp_gradient_is_softmax() {
        let mut g = Graph::new();
        let x = g.input("x", 1, 3).unwrap();
        let lse = g.logsumexp_rows(x).unwrap();
        let sm = g.softmax_rows(x).unwrap();
        let (gg, grads) = gradient(&g, lse, &[x]).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[("x", Tensor::new(1, 3, vec![0.2, -1.4, 2.7]).unwrap())]);
        eval(&gg, &bindings, &mut ws).unwrap();
        let got = &ws.value(grads[0]).data;
        let want = &ws.value(sm).data;
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "lse gradient {a} != softmax {b}");
        }
    }

    /// For L = ½ θᵀAθ with symmetric A, H·v = A·v exactly.
    #[test]
    fn hvp_of_quadratic_form_is_matrix_vector_product() {
        let a = Tensor::new(3, 3, vec![2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 4.0]).unwrap();
        let mut g = Graph::new();
        let theta = g.input("theta", 3, 1).unwrap();
        let a_const = g.constant(a.clone());
        let a_theta = g.matmul(a_const, theta).unwrap();
        let q = g.mul(theta, a_theta).unwrap();
        let s = g.sum_all(q).unwrap();
        let loss = g.scale(s, 0.5).unwrap();

        let h = hvp(&g, loss, &[theta]).unwrap();
        let mut ws = Workspace::new();
        let v = [1.0, -2.0, 0.5];
        let mut bindings = bind(&[("theta", Tensor::column(&[0.3, 0.7, -0.2]))]);
        bindings.insert(h.direction_inputs[0].clone(), Tensor::column(&v));
        eval(&h.graph, &bindings, &mut ws).unwrap();

        // A·v computed by hand.
        let want = [2.0 * 1.0 + 1.0 * -2.0, 1.0 - 6.0 - 0.5, 2.0 + 2.0];
        let got = &ws.value(h.hvps[0]).data;
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-14, "hvp {got:?} != {want:?}");
        }
    }

    /// d²/dx² Σ tanh(x_i): the diagonal Hessian is −2·t·(1−t²), t = tanh(x).
    #[test]
    fn hvp_of_tanh_sum_matches_closed_form() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 1).unwrap();
        let t = g.tanh(x).unwrap();
        let loss = g.sum_all(t).unwrap();
        let h = hvp(&g, loss, &[x]).unwrap();

        let xs = [0.3, -1.1];
        let v = [1.0, 2.0];
        let mut bindings = bind(&[("x", Tensor::column(&xs))]);
        bindings.insert(h.direction_inputs[0].clone(), Tensor::column(&v));
        let mut ws = Workspace::new();
        eval(&h.graph, &bindings, &mut ws).unwrap();

        for i in 0..2 {
            let th = xs[i].tanh();
            let want = -2.0 * th * (1.0 - th * th) * v[i];
            let got = ws.value(h.hvps[0]).data[i];
            assert!((got - want).abs() < 1e-14, "component {i}: {got} vs {want}");
        }
    }

    /// The hvp graph also exposes the loss and gradient at the same point.
    #[test]
    fn hvp_graph_reports_loss_and_gradient() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 1).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let h = hvp(&g, loss, &[x]).unwrap();

        let mut bindings = bind(&[("x", Tensor::column(&[1.5, -2.0]))]);
        bindings.insert(h.direction_inputs[0].clone(), Tensor::column(&[0.0, 1.0]));
        let mut ws = Workspace::new();
        eval(&h.graph, &bindings, &mut ws).unwrap();

        assert_eq!(ws.scalar(h.loss), 1.5f64 * 1.5 + 4.0);
        assert_eq!(ws.value(h.grads[0]).data, vec![3.0, -4.0]);
        // H = 2I, so H·e₂ = (0, 2).
        assert_eq!(ws.value(h.hvps[0]).data, vec![0.0, 2.0]);
    }

    /// Reshape is order-preserving, so its adjoint is the reverse reshape.
    #[test]
    fn reshape_gradient_restores_input_layout() {
        let mut g = Graph::new();
        let x = g.input("x", 4, 1).unwrap();
        let m = g.reshape(x, 2, 2).unwrap();
        let w = g.constant(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let prod = g.mul(m, w).unwrap();
        let loss = g.sum_all(prod).unwrap();
        let (gg, grads) = gradient(&g, loss, &[x]).unwrap();
        let mut ws = Workspace::new();
        let bindings = bind(&[("x", Tensor::column(&[5.0, 6.0, 7.0, 8.0]))]);
        eval(&gg, &bindings, &mut ws).unwrap();
        assert_eq!(gg.shape(grads[0]), (4, 1));
        assert_eq!(ws.value(grads[0]).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hvp_rejects_non_input_targets() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 1).unwrap();
        let t = g.tanh(x).unwrap();
        let loss = g.sum_all(t).unwrap();
        assert!(hvp(&g, loss, &[t]).is_err());
    }

    #[test]
    fn pruning_drops_dead_nodes_and_preserves_values() {
        let mut g = Graph::new();
        let x = g.input("x", 2, 1).unwrap();
        let dead = g.input("dead", 5, 5).unwrap();
        let _dead2 = g.tanh(dead).unwrap();
        let live = g.sum_all(x).unwrap();
        let (pg, kept) = g.pruned(&[live]);
        assert_eq!(pg.len(), 2, "only x and sum survive");
        let mut ws = Workspace::new();
        let bindings = bind(&[("x", Tensor::column(&[1.0, 2.0]))]);
        eval(&pg, &bindings, &mut ws).unwrap();
        assert_eq!(ws.scalar(kept[0]), 3.0);
        assert!(pg.input_id("dead").is_none(), "pruned inputs drop from the name map");
    }
}
