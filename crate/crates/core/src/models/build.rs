//! Parameter tables, initialization, and forward-graph construction.

use rand::Rng;

use super::config::{ModelConfig, ModelKind, QuadraticSpec};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::linalg::FlatVector;
use crate::rng::{self, purpose};

/// One named parameter tensor and the diagnosis group it belongs to
/// (`None` = the residual "other" group: embeddings, classifier head).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: Option<String>,
}

impl ParamSpec {
    fn new(name: &str, rows: usize, cols: usize, group: Option<&str>) -> Self {
        ParamSpec { name: name.into(), rows, cols, group: group.map(str::to_string) }
    }
}

/// The full parameter table for `cfg`, in canonical (flattening) order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let (v, e, c) = (cfg.vocab_size, cfg.embed_dim, cfg.classes);
    // {W, b, u} of one tanh attention scorer: score = tanh(x·W + b)·u.
    let scorer = |prefix: &str| {
        vec![
            ParamSpec::new(&format!("{prefix}.W"), e, e, Some(prefix)),
            ParamSpec::new(&format!("{prefix}.b"), 1, e, Some(prefix)),
            ParamSpec::new(&format!("{prefix}.u"), e, 1, Some(prefix)),
        ]
    };
    let proj = |prefix: &str| {
        vec![
            ParamSpec::new(&format!("{prefix}.W"), e, e, Some(prefix)),
            ParamSpec::new(&format!("{prefix}.b"), 1, e, Some(prefix)),
        ]
    };
    let classifier = || {
        vec![
            ParamSpec::new("classifier.W", e, c, None),
            ParamSpec::new("classifier.b", 1, c, None),
        ]
    };
    let mut specs = Vec::new();
    match cfg.kind {
        ModelKind::Hierarchical => {
            specs.push(ParamSpec::new("embed", v, e, None));
            specs.extend(scorer("word_attention"));
            specs.extend(scorer("sentence_attention"));
            specs.extend(classifier());
        }
        ModelKind::Selfattn => {
            specs.push(ParamSpec::new("embed", v, e, None));
            for p in ["query_proj", "key_proj", "value_proj", "output_proj"] {
                specs.extend(proj(p));
            }
            specs.extend(classifier());
        }
        ModelKind::Crossattn => {
            specs.push(ParamSpec::new("embed_a", v, e, None));
            specs.push(ParamSpec::new("embed_b", v, e, None));
            specs.extend(scorer("stream_a_attention"));
            specs.extend(scorer("stream_b_attention"));
            for w in ["Wq", "Wk", "Wv"] {
                specs.push(ParamSpec::new(
                    &format!("cross_attention.{w}"),
                    e,
                    e,
                    Some("cross_attention"),
                ));
            }
            specs.extend(classifier());
        }
        ModelKind::Quadratic => {
            let spec = cfg.quadratic.as_ref().expect("validated above");
            for b in &spec.blocks {
                specs.push(ParamSpec::new(&format!("{}.theta", b.name), b.size, 1, Some(&b.name)));
            }
        }
    }
    Ok(specs)
}

/// Deterministic initialization: each tensor `k` draws from the stream
/// `(init_seed, INIT, k)` — uniform in `±1/√rows` for weights, zero for
/// biases — so adding or reordering *other* tensors cannot change a tensor's
/// initial values.
pub fn init_params(cfg: &ModelConfig, specs: &[ParamSpec]) -> FlatVector {
    let mut out = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let n = spec.rows * spec.cols;
        if spec.name.ends_with(".b") {
            out.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        let mut r = rng::stream(cfg.init_seed, &[purpose::INIT, k as u64]);
        let bound = 1.0 / (spec.rows as f64).sqrt();
        out.extend((0..n).map(|_| (2.0 * r.random::<f64>() - 1.0) * bound));
    }
    FlatVector(out)
}

/// A forward graph ready for loss evaluation and differentiation.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: Graph,
    /// Scalar mean loss over the batch.
    pub loss: NodeId,
    /// Pre-softmax class scores, `batch × classes` (absent for the quadratic
    /// surrogate, which has no classifier).
    pub logits: Option<NodeId>,
    /// Every attention-weight node (softmax outputs), for row-stochasticity
    /// checks.
    pub attentions: Vec<NodeId>,
}

/// Build the loss graph for a fixed batch size.
///
/// Graphs depend only on (config, batch size): batch *contents* enter through
/// the one-hot input tensors, so one graph serves every batch of that size.
pub fn build_graph(cfg: &ModelConfig, batch: usize) -> Result<BuiltGraph> {
    cfg.validate()?;
    if cfg.kind != ModelKind::Quadratic && batch == 0 {
        return Err(Error::InvalidConfig {
            field: "batch".into(),
            message: "batch size must be positive".into(),
        });
    }
    match cfg.kind {
        ModelKind::Hierarchical => build_hierarchical(cfg, batch),
        ModelKind::Selfattn => build_selfattn(cfg, batch),
        ModelKind::Crossattn => build_crossattn(cfg, batch),
        ModelKind::Quadratic => build_quadratic(cfg.quadratic.as_ref().expect("validated")),
    }
}

/// Tanh attention pooling: score each of `N = groups·per_group` rows with
/// `tanh(x·W + b)·u`, softmax within each consecutive `per_group` block, and
/// return the `groups × E` weighted sums of the original rows.
struct Pooled {
    out: NodeId,
    attention: NodeId,
}

fn attention_pool(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    u: NodeId,
    per_group: usize,
    groups: usize,
) -> Result<Pooled> {
    let (n, e) = g.shape(x);
    debug_assert_eq!(n, per_group * groups);
    let xw = g.matmul(x, w)?;
    let bb = g.broadcast_rows(b, n)?;
    let pre = g.add(xw, bb)?;
    let h = g.tanh(pre)?;
    let scores = g.matmul(h, u)?; // n×1
    let grouped = g.reshape(scores, groups, per_group)?;
    let attention = g.softmax_rows(grouped)?;
    let flat = g.reshape(attention, n, 1)?;
    let weights = g.broadcast_cols(flat, e)?;
    let weighted = g.mul(x, weights)?;
    let sum_idx: Vec<usize> = (0..n).map(|i| i / per_group).collect();
    let out = g.scatter_rows(weighted, sum_idx, groups)?;
    Ok(Pooled { out, attention })
}

/// `x·W + b` with the bias row broadcast down all rows.
fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    let (n, _) = g.shape(xw);
    let bb = g.broadcast_rows(b, n)?;
    g.add(xw, bb)
}

fn classifier_loss(
    g: &mut Graph,
    pooled: NodeId,
    batch: usize,
    classes: usize,
) -> Result<(NodeId, NodeId)> {
    let wc = g.input("classifier.W", g.shape(pooled).1, classes)?;
    let bc = g.input("classifier.b", 1, classes)?;
    let logits = affine(g, pooled, wc, bc)?;
    let labels = g.input("labels", batch, classes)?;
    let loss = g.cross_entropy_with_logits(logits, labels)?;
    Ok((logits, loss))
}

fn build_hierarchical(cfg: &ModelConfig, batch: usize) -> Result<BuiltGraph> {
    let (v, e) = (cfg.vocab_size, cfg.embed_dim);
    let (s, w_len) = (cfg.sents_per_doc, cfg.words_per_sent);
    let n_words = batch * s * w_len;

    let mut g = Graph::new();
    let tokens = g.input("tokens", n_words, v)?;
    let embed = g.input("embed", v, e)?;
    let ww = g.input("word_attention.W", e, e)?;
    let wb = g.input("word_attention.b", 1, e)?;
    let wu = g.input("word_attention.u", e, 1)?;
    let sw = g.input("sentence_attention.W", e, e)?;
    let sb = g.input("sentence_attention.b", 1, e)?;
    let su = g.input("sentence_attention.u", e, 1)?;

    let x = g.matmul(tokens, embed)?; // (B·S·W)×E
    let word = attention_pool(&mut g, x, ww, wb, wu, w_len, batch * s)?;
    let sent = attention_pool(&mut g, word.out, sw, sb, su, s, batch)?;
    let (logits, loss) = classifier_loss(&mut g, sent.out, batch, cfg.classes)?;

    Ok(BuiltGraph {
        graph: g,
        loss,
        logits: Some(logits),
        attentions: vec![word.attention, sent.attention],
    })
}

fn build_selfattn(cfg: &ModelConfig, batch: usize) -> Result<BuiltGraph> {
    let (v, e, t) = (cfg.vocab_size, cfg.embed_dim, cfg.seq_len);
    let heads = cfg.heads;
    let d = e / heads;
    let n = batch * t;

    let mut g = Graph::new();
    let tokens = g.input("tokens", n, v)?;
    let embed = g.input("embed", v, e)?;
    let x = g.matmul(tokens, embed)?;

    let mut projected = Vec::new();
    for p in ["query_proj", "key_proj", "value_proj"] {
        let w = g.input(&format!("{p}.W"), e, e)?;
        let b = g.input(&format!("{p}.b"), 1, e)?;
        projected.push(affine(&mut g, x, w, b)?);
    }
    let (q, k, val) = (projected[0], projected[1], projected[2]);

    // Scaled dot-product attention, head by head and document by document:
    // attention never crosses document boundaries, and each head sees its own
    // embed-dim/heads slice of the projections.
    let mut attentions = Vec::new();
    let mut concat: Option<NodeId> = None;
    for h in 0..heads {
        let cols: Vec<usize> = (h * d..(h + 1) * d).collect();
        let qh = g.gather_cols(q, cols.clone())?;
        let kh = g.gather_cols(k, cols.clone())?;
        let vh = g.gather_cols(val, cols.clone())?;
        let mut head_out: Option<NodeId> = None;
        for doc in 0..batch {
            let rows: Vec<usize> = (doc * t..(doc + 1) * t).collect();
            let qd = g.gather_rows(qh, rows.clone())?;
            let kd = g.gather_rows(kh, rows.clone())?;
            let vd = g.gather_rows(vh, rows.clone())?;
            let kt = g.transpose(kd)?;
            let raw = g.matmul(qd, kt)?;
            let scaled = g.scale(raw, 1.0 / (d as f64).sqrt())?;
            let alpha = g.softmax_rows(scaled)?; // t×t
            attentions.push(alpha);
            let ctx = g.matmul(alpha, vd)?; // t×d
            let spread = g.scatter_rows(ctx, rows, n)?;
            head_out = Some(match head_out {
                None => spread,
                Some(acc) => g.add(acc, spread)?,
            });
        }
        let full = g.scatter_cols(head_out.expect("batch > 0"), cols, e)?;
        concat = Some(match concat {
            None => full,
            Some(acc) => g.add(acc, full)?,
        });
    }

    let wo = g.input("output_proj.W", e, e)?;
    let bo = g.input("output_proj.b", 1, e)?;
    let attn = affine(&mut g, concat.expect("heads > 0"), wo, bo)?;
    let y = g.add(x, attn)?; // residual connection

    // Mean pool each document's rows.
    let pool_idx: Vec<usize> = (0..n).map(|i| i / t).collect();
    let sums = g.scatter_rows(y, pool_idx, batch)?;
    let pooled = g.scale(sums, 1.0 / t as f64)?;

    let (logits, loss) = classifier_loss(&mut g, pooled, batch, cfg.classes)?;
    Ok(BuiltGraph { graph: g, loss, logits: Some(logits), attentions })
}

fn build_crossattn(cfg: &ModelConfig, batch: usize) -> Result<BuiltGraph> {
    let (v, e, t) = (cfg.vocab_size, cfg.embed_dim, cfg.seq_len);
    let heads = cfg.heads;
    let d = e / heads;
    let n = batch * t;

    let mut g = Graph::new();
    let tokens_a = g.input("tokens_a", n, v)?;
    let tokens_b = g.input("tokens_b", n, v)?;
    let embed_a = g.input("embed_a", v, e)?;
    let embed_b = g.input("embed_b", v, e)?;
    let xa = g.matmul(tokens_a, embed_a)?;
    let xb = g.matmul(tokens_b, embed_b)?;

    let mut pooled = Vec::new();
    let mut attentions = Vec::new();
    for (prefix, x) in [("stream_a_attention", xa), ("stream_b_attention", xb)] {
        let w = g.input(&format!("{prefix}.W"), e, e)?;
        let b = g.input(&format!("{prefix}.b"), 1, e)?;
        let u = g.input(&format!("{prefix}.u"), e, 1)?;
        let p = attention_pool(&mut g, x, w, b, u, t, batch)?;
        pooled.push(p.out);
        attentions.push(p.attention);
    }
    let (pooled_a, pooled_b) = (pooled[0], pooled[1]);

    // Cross-attention: each document's pooled stream-A vector queries that
    // document's stream-B tokens.
    let wq = g.input("cross_attention.Wq", e, e)?;
    let wk = g.input("cross_attention.Wk", e, e)?;
    let wv = g.input("cross_attention.Wv", e, e)?;
    let q = g.matmul(pooled_a, wq)?; // B×E
    let k = g.matmul(xb, wk)?; // (B·T)×E
    let val = g.matmul(xb, wv)?;

    let mut ctx: Option<NodeId> = None;
    for h in 0..heads {
        let cols: Vec<usize> = (h * d..(h + 1) * d).collect();
        let qh = g.gather_cols(q, cols.clone())?;
        let kh = g.gather_cols(k, cols.clone())?;
        let vh = g.gather_cols(val, cols.clone())?;
        let mut head_out: Option<NodeId> = None;
        for doc in 0..batch {
            let rows: Vec<usize> = (doc * t..(doc + 1) * t).collect();
            let qd = g.gather_rows(qh, vec![doc])?; // 1×d
            let kd = g.gather_rows(kh, rows.clone())?;
            let vd = g.gather_rows(vh, rows)?;
            let kt = g.transpose(kd)?;
            let raw = g.matmul(qd, kt)?; // 1×T
            let scaled = g.scale(raw, 1.0 / (d as f64).sqrt())?;
            let alpha = g.softmax_rows(scaled)?;
            attentions.push(alpha);
            let c = g.matmul(alpha, vd)?; // 1×d
            let spread = g.scatter_rows(c, vec![doc], batch)?;
            head_out = Some(match head_out {
                None => spread,
                Some(acc) => g.add(acc, spread)?,
            });
        }
        let full = g.scatter_cols(head_out.expect("batch > 0"), cols, e)?;
        ctx = Some(match ctx {
            None => full,
            Some(acc) => g.add(acc, full)?,
        });
    }

    // Fuse by summation: both stream summaries plus the cross-attended
    // context, so every attention group is on the gradient path.
    let ab = g.add(pooled_a, pooled_b)?;
    let fused = g.add(ab, ctx.expect("heads > 0"))?;
    let (logits, loss) = classifier_loss(&mut g, fused, batch, cfg.classes)?;
    Ok(BuiltGraph { graph: g, loss, logits: Some(logits), attentions })
}

fn build_quadratic(spec: &QuadraticSpec) -> Result<BuiltGraph> {
    let mut g = Graph::new();
    let mut theta = std::collections::BTreeMap::new();
    let mut loss = g.scalar_const(spec.offset);
    for b in &spec.blocks {
        let th = g.input(&format!("{}.theta", b.name), b.size, 1)?;
        theta.insert(b.name.clone(), th);
        let center = g.constant(Tensor::new(b.size, 1, vec![b.center; b.size])?);
        let diff = g.sub(th, center)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum_all(sq)?;
        let term = g.scale(s, 0.5 * b.curvature)?;
        loss = g.add(loss, term)?;
    }
    for c in &spec.couplings {
        let sa = g.sum_all(theta[&c.a])?;
        let sb = g.sum_all(theta[&c.b])?;
        let prod = g.mul(sa, sb)?;
        let term = g.scale(prod, c.strength)?;
        loss = g.add(loss, term)?;
    }
    Ok(BuiltGraph { graph: g, loss, logits: None, attentions: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hierarchical_param_table_matches_hand_count() {
        let cfg = ModelConfig::with_kind(ModelKind::Hierarchical);
        let specs = param_specs(&cfg).unwrap();
        let total: usize = specs.iter().map(|s| s.rows * s.cols).sum();
        // embed 12·8 + 2 scorers (64+8+8) + classifier (16+2)
        assert_eq!(total, 96 + 2 * 80 + 18);
        let grouped: Vec<_> = specs.iter().filter_map(|s| s.group.as_deref()).collect();
        assert!(grouped.iter().all(|g| *g == "word_attention" || *g == "sentence_attention"));
    }

    #[test]
    fn selfattn_exposes_four_projection_groups() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let specs = param_specs(&cfg).unwrap();
        let mut groups: Vec<_> = specs.iter().filter_map(|s| s.group.clone()).collect();
        groups.sort();
        groups.dedup();
        assert_eq!(groups, ["key_proj", "output_proj", "query_proj", "value_proj"]);
    }

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let specs = param_specs(&cfg).unwrap();
        let a = init_params(&cfg, &specs);
        let b = init_params(&cfg, &specs);
        assert_eq!(a, b);
        let mut offset = 0;
        for s in &specs {
            let n = s.rows * s.cols;
            if s.name.ends_with(".b") {
                assert!(a.0[offset..offset + n].iter().all(|&x| x == 0.0), "{} not zero", s.name);
            } else {
                let bound = 1.0 / (s.rows as f64).sqrt();
                assert!(a.0[offset..offset + n].iter().all(|&x| x.abs() <= bound));
                assert!(a.0[offset..offset + n].iter().any(|&x| x != 0.0));
            }
            offset += n;
        }
    }

    #[test]
    fn graphs_build_for_all_attention_kinds() {
        for kind in [ModelKind::Hierarchical, ModelKind::Selfattn, ModelKind::Crossattn] {
            let cfg = ModelConfig::with_kind(kind);
            let built = build_graph(&cfg, 3).unwrap();
            assert_eq!(built.graph.shape(built.loss), (1, 1));
            let logits = built.logits.expect("classifier present");
            assert_eq!(built.graph.shape(logits), (3, cfg.classes));
            assert!(!built.attentions.is_empty());
        }
    }

    #[test]
    fn quadratic_graph_reproduces_closed_form() {
        use crate::autodiff::{eval, Workspace};
        let mut cfg = ModelConfig::with_kind(ModelKind::Quadratic);
        cfg.quadratic = Some(QuadraticSpec {
            blocks: vec![
                super::super::config::QuadraticBlock {
                    name: "hot".into(),
                    size: 2,
                    curvature: 3.0,
                    center: 1.0,
                },
                super::super::config::QuadraticBlock {
                    name: "cold".into(),
                    size: 1,
                    curvature: -2.0,
                    center: 0.0,
                },
            ],
            couplings: vec![super::super::config::QuadraticCoupling {
                a: "hot".into(),
                b: "cold".into(),
                strength: 0.5,
            }],
            offset: 10.0,
        });
        let built = build_graph(&cfg, 0).unwrap();
        let mut bindings = std::collections::BTreeMap::new();
        bindings.insert("hot.theta".to_string(), Tensor::column(&[2.0, 0.0]));
        bindings.insert("cold.theta".to_string(), Tensor::column(&[4.0]));
        let mut ws = Workspace::new();
        eval(&built.graph, &bindings, &mut ws).unwrap();
        // 10 + 3/2·((2−1)² + (0−1)²) − 2/2·16 + 0.5·(2+0)·4 = 10 + 3 − 16 + 4
        assert!((ws.scalar(built.loss) - 1.0).abs() < 1e-12);
    }
}
