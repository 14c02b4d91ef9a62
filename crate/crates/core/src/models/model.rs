//! The model object: parameters, group registry, and differentiable queries.

use std::collections::BTreeMap;

use super::build::{self, BuiltGraph, ParamSpec};
use super::config::ModelConfig;
use super::data::Batch;
use crate::autodiff::{eval, gradient, Graph, NodeId, Tensor, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{FlatVector, IndexSet};
use crate::spectral::GraphHvpOperator;

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

/// Where one named tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub group: Option<String>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// The canonical tensor-to-flat-vector mapping: tensors in declaration order,
/// each flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn from_specs(specs: &[ParamSpec]) -> Self {
        let mut entries = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for s in specs {
            entries.push(ParamEntry {
                name: s.name.clone(),
                rows: s.rows,
                cols: s.cols,
                offset,
                group: s.group.clone(),
            });
            offset += s.rows * s.cols;
        }
        ParamLayout { entries, total: offset }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| Error::MissingInput {
            name: name.to_string(),
        })
    }

    /// Split a flat vector into named tensors.
    pub fn tensors(&self, params: &FlatVector) -> Result<BTreeMap<String, Tensor>> {
        if params.dim() != self.total {
            return Err(Error::DimMismatch { expected: self.total, actual: params.dim() });
        }
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let t = Tensor::new(e.rows, e.cols, params.0[e.span()].to_vec())?;
            out.insert(e.name.clone(), t);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Group registry
// ---------------------------------------------------------------------------

/// Named attention-parameter groups plus the residual "other" set
/// (embeddings, classifier head). Together they partition `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRegistry {
    groups: BTreeMap<String, IndexSet>,
    other: IndexSet,
    dim: usize,
}

impl GroupRegistry {
    pub fn from_layout(layout: &ParamLayout) -> Result<Self> {
        let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut other = Vec::new();
        for e in layout.entries() {
            let slot = match &e.group {
                Some(gname) => by_group.entry(gname.clone()).or_default(),
                None => &mut other,
            };
            slot.extend(e.span());
        }
        let mut groups = BTreeMap::new();
        for (name, idx) in by_group {
            if idx.is_empty() {
                return Err(Error::EmptyGroup { name });
            }
            groups.insert(name, IndexSet::new(idx)?);
        }
        let registry =
            GroupRegistry { groups, other: IndexSet::new(other)?, dim: layout.total() };
        registry.check_partition()?;
        Ok(registry)
    }

    /// Every index in exactly one set, covering `0..dim`.
    fn check_partition(&self) -> Result<()> {
        let mut all: Vec<usize> = self.other.iter().collect();
        for idx in self.groups.values() {
            all.extend(idx.iter());
        }
        let set = IndexSet::new(all)?; // errors on any overlap
        if set.len() != self.dim {
            return Err(Error::InvalidConfig {
                field: "registry".into(),
                message: format!(
                    "groups cover {} of {} parameter indices",
                    set.len(),
                    self.dim
                ),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Named attention groups, sorted by name.
    pub fn group_names(&self) -> Vec<&str> {
        self.groups.keys().map(String::as_str).collect()
    }

    /// Look up a named group; `"other"` resolves to the residual set.
    pub fn group(&self, name: &str) -> Result<&IndexSet> {
        if name == "other" {
            return Ok(&self.other);
        }
        self.groups.get(name).ok_or_else(|| Error::UnknownGroup {
            name: name.to_string(),
            known: self.known_names().join(", "),
        })
    }

    pub fn other(&self) -> &IndexSet {
        &self.other
    }

    /// All resolvable names: the attention groups plus `"other"` (when it is
    /// non-empty).
    pub fn known_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.groups.keys().cloned().collect();
        if !self.other.is_empty() {
            names.push("other".to_string());
        }
        names
    }

    /// Serializable view: group name → sorted indices, including `other`.
    pub fn as_map(&self) -> BTreeMap<String, Vec<usize>> {
        let mut m: BTreeMap<String, Vec<usize>> = self
            .groups
            .iter()
            .map(|(n, idx)| (n.clone(), idx.as_slice().to_vec()))
            .collect();
        if !self.other.is_empty() {
            m.insert("other".to_string(), self.other.as_slice().to_vec());
        }
        m
    }

    /// Per-index step sizes: `base` everywhere, multiplied by `scales[name]`
    /// on that group's indices. Unknown scale keys are rejected.
    pub fn scale_vector(&self, base: f64, scales: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut out = vec![base; self.dim];
        for (name, &s) in scales {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidConfig {
                    field: format!("lr_scales.{name}"),
                    message: format!("scale must be finite and nonnegative, got {s}"),
                });
            }
            for i in self.group(name)?.iter() {
                out[i] = base * s;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct GradGraph {
    graph: Graph,
    loss: NodeId,
    grads: Vec<NodeId>,
    ws: Workspace,
}

struct LogitsGraph {
    graph: Graph,
    logits: NodeId,
    ws: Workspace,
}

/// A model: configuration, flat parameters, and cached differentiable graphs.
///
/// Graphs are cached per batch size; batch contents flow through input
/// tensors, so cache entries are reused across batches and epochs.
pub struct Model {
    config: ModelConfig,
    pub params: FlatVector,
    layout: ParamLayout,
    registry: GroupRegistry,
    loss_cache: BTreeMap<usize, (BuiltGraph, Workspace)>,
    grad_cache: BTreeMap<usize, GradGraph>,
    logits_cache: BTreeMap<usize, LogitsGraph>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("param_count", &self.layout.total())
            .field("groups", &self.registry.group_names())
            .finish_non_exhaustive()
    }
}

impl Model {
    /// Build a model with deterministic seeded initialization.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let specs = build::param_specs(&config)?;
        let layout = ParamLayout::from_specs(&specs);
        if layout.total() > super::config::MAX_PARAMS {
            return Err(Error::InvalidConfig {
                field: "config".into(),
                message: format!(
                    "{} parameters exceeds the {} budget for exact cross-checks",
                    layout.total(),
                    super::config::MAX_PARAMS
                ),
            });
        }
        let params = build::init_params(&config, &specs);
        let registry = GroupRegistry::from_layout(&layout)?;
        Ok(Model {
            config,
            params,
            layout,
            registry,
            loss_cache: BTreeMap::new(),
            grad_cache: BTreeMap::new(),
            logits_cache: BTreeMap::new(),
        })
    }

    /// Reconstruct a model around existing parameter values (checkpoint load).
    pub fn from_parts(config: ModelConfig, params: FlatVector) -> Result<Self> {
        let mut model = Model::build(config)?;
        if params.dim() != model.layout.total() {
            return Err(Error::DimMismatch {
                expected: model.layout.total(),
                actual: params.dim(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn registry(&self) -> &GroupRegistry {
        &self.registry
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Current parameters as named tensors plus the batch tensors — the full
    /// binding map for this model's graphs.
    pub fn bindings(&self, batch: &Batch) -> Result<BTreeMap<String, Tensor>> {
        let mut b = self.layout.tensors(&self.params)?;
        for (k, v) in &batch.tensors {
            b.insert(k.clone(), v.clone());
        }
        Ok(b)
    }

    fn batch_matches(&self, batch: &Batch) -> Result<()> {
        let quadratic = self.config.kind == super::config::ModelKind::Quadratic;
        if quadratic != (batch.size == 0) {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "batch of {} examples does not fit model kind {:?}",
                    batch.size, self.config.kind
                ),
            });
        }
        Ok(())
    }

    /// Mean loss over the batch at the current parameters.
    pub fn loss(&mut self, batch: &Batch) -> Result<f64> {
        self.batch_matches(batch)?;
        if !self.loss_cache.contains_key(&batch.size) {
            let built = build::build_graph(&self.config, batch.size)?;
            self.loss_cache.insert(batch.size, (built, Workspace::new()));
        }
        let bindings = self.bindings(batch)?;
        let (built, ws) = self.loss_cache.get_mut(&batch.size).expect("inserted above");
        eval(&built.graph, &bindings, ws)?;
        Ok(ws.scalar(built.loss))
    }

    /// Loss and the full flat gradient at the current parameters.
    pub fn loss_and_gradient(&mut self, batch: &Batch) -> Result<(f64, FlatVector)> {
        self.batch_matches(batch)?;
        if !self.grad_cache.contains_key(&batch.size) {
            let built = build::build_graph(&self.config, batch.size)?;
            let targets: Vec<NodeId> = self
                .layout
                .names()
                .iter()
                .map(|n| built.graph.input_id(n).expect("layout names are graph inputs"))
                .collect();
            let (ggraph, grads) = gradient(&built.graph, built.loss, &targets)?;
            let (graph, kept) = ggraph.pruned(
                &std::iter::once(built.loss).chain(grads.iter().copied()).collect::<Vec<_>>(),
            );
            self.grad_cache.insert(
                batch.size,
                GradGraph {
                    graph,
                    loss: kept[0],
                    grads: kept[1..].to_vec(),
                    ws: Workspace::new(),
                },
            );
        }
        let bindings = self.bindings(batch)?;
        let gg = self.grad_cache.get_mut(&batch.size).expect("inserted above");
        eval(&gg.graph, &bindings, &mut gg.ws)?;
        let mut flat = Vec::with_capacity(self.layout.total());
        for &id in &gg.grads {
            flat.extend_from_slice(&gg.ws.value(id).data);
        }
        Ok((gg.ws.scalar(gg.loss), FlatVector(flat)))
    }

    /// Predicted class per example: row-wise argmax of the logits, ties
    /// broken toward the lowest class index.
    pub fn predict(&mut self, batch: &Batch) -> Result<Vec<usize>> {
        self.batch_matches(batch)?;
        if !self.logits_cache.contains_key(&batch.size) {
            let built = build::build_graph(&self.config, batch.size)?;
            let logits = built.logits.ok_or_else(|| Error::InvalidConfig {
                field: "kind".into(),
                message: "the quadratic surrogate has no classifier to predict with".into(),
            })?;
            // Pruning to the logits drops the labels input and the loss head.
            let (graph, kept) = built.graph.pruned(&[logits]);
            self.logits_cache
                .insert(batch.size, LogitsGraph { graph, logits: kept[0], ws: Workspace::new() });
        }
        let bindings = self.bindings(batch)?;
        let lg = self.logits_cache.get_mut(&batch.size).expect("inserted above");
        eval(&lg.graph, &bindings, &mut lg.ws)?;
        let logits = lg.ws.value(lg.logits);
        let mut out = Vec::with_capacity(logits.rows);
        for r in 0..logits.rows {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Fraction of examples predicted correctly.
    pub fn accuracy(&mut self, batch: &Batch) -> Result<f64> {
        let predicted = self.predict(batch)?;
        let hits = predicted.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / predicted.len().max(1) as f64)
    }

    /// Exact Hessian-vector-product operator for the loss on `batch`, taken
    /// at the current parameters over all parameters.
    pub fn hvp_operator(&self, batch: &Batch) -> Result<GraphHvpOperator> {
        self.batch_matches(batch)?;
        let built = build::build_graph(&self.config, batch.size)?;
        GraphHvpOperator::new(
            &built.graph,
            built.loss,
            &self.layout.names(),
            &self.params,
            &batch.tensors,
        )
    }
}
