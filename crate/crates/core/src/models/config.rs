//! Model configuration: the architecture family and its dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which architecture a [`ModelConfig`] describes.
///
/// The three attention families are the diagnosis subjects. `Quadratic` is an
/// analytic surrogate — a loss whose Hessian is known in closed form — used to
/// exercise the same training/diagnosis plumbing against exact expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Word-level attention inside sentences, sentence-level attention inside
    /// documents, then a linear classifier.
    Hierarchical,
    /// One multi-head self-attention block with residual and mean pooling.
    Selfattn,
    /// Two attention-pooled token streams fused by cross-attention.
    Crossattn,
    /// Closed-form quadratic loss with engineered per-block curvature.
    Quadratic,
}

impl ModelKind {
    pub fn is_multi_head(self) -> bool {
        matches!(self, ModelKind::Selfattn | ModelKind::Crossattn)
    }
}

/// One block of a quadratic surrogate: `size` parameters with constant
/// curvature `curvature` (the Hessian block is `curvature · I`) centered at
/// `center` in every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBlock {
    pub name: String,
    pub size: usize,
    pub curvature: f64,
    #[serde(default)]
    pub center: f64,
}

/// A bilinear cross term `strength · (Σ block a)(Σ block b)`, giving an exact
/// off-diagonal Hessian block of constant value `strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCoupling {
    pub a: String,
    pub b: String,
    pub strength: f64,
}

/// Full description of a quadratic surrogate loss:
/// `offset + Σ_g ½·c_g·‖θ_g − μ_g·1‖² + Σ couplings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub blocks: Vec<QuadraticBlock>,
    #[serde(default)]
    pub couplings: Vec<QuadraticCoupling>,
    #[serde(default)]
    pub offset: f64,
}

fn default_vocab() -> usize {
    12
}
fn default_embed() -> usize {
    8
}
fn default_heads() -> usize {
    2
}
fn default_classes() -> usize {
    2
}
fn default_seq_len() -> usize {
    6
}
fn default_sents() -> usize {
    3
}
fn default_words() -> usize {
    4
}

/// Architecture and initialization settings for one model.
///
/// Defaults give desk-scale models (a few hundred parameters) whose dense
/// per-group Hessians are cheap enough for exact cross-checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    /// Attention heads (self- and cross-attention kinds only).
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Tokens per sequence (selfattn) or per stream (crossattn).
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// Sentences per document (hierarchical only).
    #[serde(default = "default_sents")]
    pub sents_per_doc: usize,
    /// Words per sentence (hierarchical only).
    #[serde(default = "default_words")]
    pub words_per_sent: usize,
    #[serde(default)]
    pub init_seed: u64,
    /// Required for (and only for) the quadratic kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSpec>,
}

/// Parameter budget that keeps dense whole-model Hessian cross-checks cheap.
pub const MAX_PARAMS: usize = 20_000;

impl ModelConfig {
    /// A config with defaults for everything but the kind. The quadratic kind
    /// additionally needs [`ModelConfig::quadratic`] filled in.
    pub fn with_kind(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            vocab_size: default_vocab(),
            embed_dim: default_embed(),
            heads: default_heads(),
            classes: default_classes(),
            seq_len: default_seq_len(),
            sents_per_doc: default_sents(),
            words_per_sent: default_words(),
            init_seed: 0,
            quadratic: None,
        }
    }

    /// Tokens each example carries (0 for the quadratic surrogate, which is
    /// data-free).
    pub fn tokens_per_example(&self) -> usize {
        match self.kind {
            ModelKind::Hierarchical => self.sents_per_doc * self.words_per_sent,
            ModelKind::Selfattn => self.seq_len,
            ModelKind::Crossattn => 2 * self.seq_len,
            ModelKind::Quadratic => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive: &[(&str, usize)] = match self.kind {
            ModelKind::Hierarchical => &[
                ("vocab_size", self.vocab_size),
                ("embed_dim", self.embed_dim),
                ("classes", self.classes),
                ("sents_per_doc", self.sents_per_doc),
                ("words_per_sent", self.words_per_sent),
            ],
            ModelKind::Selfattn | ModelKind::Crossattn => &[
                ("vocab_size", self.vocab_size),
                ("embed_dim", self.embed_dim),
                ("heads", self.heads),
                ("classes", self.classes),
                ("seq_len", self.seq_len),
            ],
            ModelKind::Quadratic => &[],
        };
        for &(field, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    field: field.into(),
                    message: "must be positive".into(),
                });
            }
        }
        if self.kind != ModelKind::Quadratic && self.classes < 2 {
            return Err(Error::InvalidConfig {
                field: "classes".into(),
                message: "classification needs at least 2 classes".into(),
            });
        }
        if self.kind.is_multi_head() && !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig {
                field: "heads".into(),
                message: format!(
                    "embed_dim {} is not divisible by heads {}",
                    self.embed_dim, self.heads
                ),
            });
        }
        match (&self.quadratic, self.kind) {
            (None, ModelKind::Quadratic) => {
                return Err(Error::InvalidConfig {
                    field: "quadratic".into(),
                    message: "the quadratic kind requires a quadratic spec".into(),
                });
            }
            (Some(_), k) if k != ModelKind::Quadratic => {
                return Err(Error::InvalidConfig {
                    field: "quadratic".into(),
                    message: format!("a quadratic spec is only valid for kind quadratic, not {k:?}"),
                });
            }
            (Some(spec), _) => validate_quadratic(spec)?,
            (None, _) => {}
        }
        Ok(())
    }
}

fn validate_quadratic(spec: &QuadraticSpec) -> Result<()> {
    if spec.blocks.is_empty() {
        return Err(Error::InvalidConfig {
            field: "quadratic.blocks".into(),
            message: "at least one block is required".into(),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for b in &spec.blocks {
        if b.name.is_empty() || b.name == "other" {
            return Err(Error::InvalidConfig {
                field: "quadratic.blocks".into(),
                message: format!("block name '{}' is reserved or empty", b.name),
            });
        }
        if b.size == 0 {
            return Err(Error::InvalidConfig {
                field: "quadratic.blocks".into(),
                message: format!("block '{}' has size 0", b.name),
            });
        }
        if !b.curvature.is_finite() || !b.center.is_finite() {
            return Err(Error::InvalidConfig {
                field: "quadratic.blocks".into(),
                message: format!("block '{}' has a non-finite curvature or center", b.name),
            });
        }
        if !seen.insert(b.name.as_str()) {
            return Err(Error::InvalidConfig {
                field: "quadratic.blocks".into(),
                message: format!("duplicate block name '{}'", b.name),
            });
        }
    }
    for c in &spec.couplings {
        if !seen.contains(c.a.as_str()) || !seen.contains(c.b.as_str()) {
            return Err(Error::InvalidConfig {
                field: "quadratic.couplings".into(),
                message: format!("coupling ({}, {}) references an unknown block", c.a, c.b),
            });
        }
        if c.a == c.b {
            return Err(Error::InvalidConfig {
                field: "quadratic.couplings".into(),
                message: format!("coupling ({}, {}) must join two distinct blocks", c.a, c.b),
            });
        }
        if !c.strength.is_finite() {
            return Err(Error::InvalidConfig {
                field: "quadratic.couplings".into(),
                message: format!("coupling ({}, {}) has a non-finite strength", c.a, c.b),
            });
        }
    }
    Ok(())
}
