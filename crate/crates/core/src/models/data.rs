//! Synthetic classification data and batch tensor construction.
//!
//! Each example is a flat token vector whose label is recoverable only from
//! one planted marker token per stream — so attending to the right position
//! is load-bearing, which is what makes attention parameters diagnosable.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// Token ids `0..FILLER_TOKENS` are semantically empty filler; id
/// `FILLER_TOKENS + c` is the class-`c` marker.
pub const FILLER_TOKENS: usize = 10;

/// One labeled example. Tokens are stored flat: a hierarchical document is
/// sentence-major, a cross-attention pair is stream A then stream B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub split: Split,
    pub gen_seed: u64,
}

/// Sizes and seed for one generated train/test pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub train_examples: usize,
    pub test_examples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Generate a train/test pair for `cfg`'s input shape.
///
/// Labels cycle through the classes so both splits are balanced. Filler
/// tokens and marker positions come from per-example streams, so example `i`
/// is the same bytes no matter how many examples surround it. Test examples
/// whose token vector collides with a train example are redrawn, which makes
/// the splits disjoint by construction.
pub fn generate(cfg: &ModelConfig, spec: &DataSpec) -> Result<DataSplits> {
    cfg.validate()?;
    if cfg.kind == ModelKind::Quadratic {
        return Err(Error::InvalidConfig {
            field: "kind".into(),
            message: "the quadratic surrogate is data-free; no dataset can be generated".into(),
        });
    }
    if cfg.vocab_size < FILLER_TOKENS + cfg.classes {
        return Err(Error::InvalidConfig {
            field: "vocab_size".into(),
            message: format!(
                "need at least {} token ids ({} filler + {} class markers), got {}",
                FILLER_TOKENS + cfg.classes,
                FILLER_TOKENS,
                cfg.classes,
                cfg.vocab_size
            ),
        });
    }

    let mut train_tokens: BTreeSet<Vec<u32>> = BTreeSet::new();
    let make = |idx: usize, taken: Option<&BTreeSet<Vec<u32>>>| -> Result<Example> {
        let label = idx % cfg.classes;
        for attempt in 0..1000u64 {
            let mut r = rng::stream(spec.seed, &[purpose::DATA, idx as u64, attempt]);
            let tokens = fill_tokens(cfg, label, &mut r);
            if taken.is_none_or(|set| !set.contains(&tokens)) {
                return Ok(Example { tokens, label });
            }
        }
        Err(Error::InvalidConfig {
            field: "test_examples".into(),
            message: "could not draw a test example disjoint from the train split".into(),
        })
    };

    let mut train = Vec::with_capacity(spec.train_examples);
    for i in 0..spec.train_examples {
        let ex = make(i, None)?;
        train_tokens.insert(ex.tokens.clone());
        train.push(ex);
    }
    let mut test = Vec::with_capacity(spec.test_examples);
    for i in 0..spec.test_examples {
        test.push(make(spec.train_examples + i, Some(&train_tokens))?);
    }

    Ok(DataSplits {
        train: Dataset { examples: train, split: Split::Train, gen_seed: spec.seed },
        test: Dataset { examples: test, split: Split::Test, gen_seed: spec.seed },
    })
}

/// Random filler everywhere, then the class marker planted at one random
/// position per stream (both streams for the cross-attention kind, so each
/// stream's attention is independently load-bearing).
fn fill_tokens(cfg: &ModelConfig, label: usize, r: &mut impl Rng) -> Vec<u32> {
    let n = cfg.tokens_per_example();
    let marker = (FILLER_TOKENS + label) as u32;
    let mut tokens: Vec<u32> =
        (0..n).map(|_| r.random_range(0..FILLER_TOKENS as u32)).collect();
    match cfg.kind {
        ModelKind::Crossattn => {
            let t = cfg.seq_len;
            let pa = r.random_range(0..t);
            let pb = r.random_range(0..t);
            tokens[pa] = marker;
            tokens[t + pb] = marker;
        }
        _ => {
            let p = r.random_range(0..n);
            tokens[p] = marker;
        }
    }
    tokens
}

// ---------------------------------------------------------------------------
// JSON-lines persistence
// ---------------------------------------------------------------------------

/// Write one `{"tokens": [...], "label": n}` object per line.
pub fn save_jsonl(examples: &[Example], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact { path: path.display().to_string() }
        } else {
            Error::Io(e)
        }
    })?;
    let mut examples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Format {
            message: format!("{}:{}: {e}", path.display(), lineno + 1),
        })?;
        examples.push(ex);
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// Dense tensors for one batch of examples, keyed by graph input name.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tensors: std::collections::BTreeMap<String, Tensor>,
    pub size: usize,
    pub labels: Vec<usize>,
}

/// One-hot encode a batch for `cfg`'s graph inputs.
///
/// Tokens become `(batch · positions) × vocab` one-hot matrices (split into
/// `tokens_a`/`tokens_b` for cross-attention, `tokens` otherwise) and labels
/// become a `batch × classes` one-hot `labels` matrix.
pub fn make_batch(cfg: &ModelConfig, examples: &[Example]) -> Result<Batch> {
    let mut tensors = std::collections::BTreeMap::new();
    if cfg.kind == ModelKind::Quadratic {
        if !examples.is_empty() {
            return Err(Error::InvalidConfig {
                field: "batch".into(),
                message: "the quadratic surrogate takes no examples".into(),
            });
        }
        return Ok(Batch { tensors, size: 0, labels: vec![] });
    }
    if examples.is_empty() {
        return Err(Error::InvalidConfig {
            field: "batch".into(),
            message: "a batch needs at least one example".into(),
        });
    }
    let n = cfg.tokens_per_example();
    let b = examples.len();
    let mut labels = Vec::with_capacity(b);
    for (i, ex) in examples.iter().enumerate() {
        if ex.tokens.len() != n {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "example {i} has {} tokens, model expects {n}",
                    ex.tokens.len()
                ),
            });
        }
        if let Some(&bad) = ex.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::IndexOutOfRange {
                context: format!("example {i} token id {bad} >= vocab size {}", cfg.vocab_size),
            });
        }
        if ex.label >= cfg.classes {
            return Err(Error::IndexOutOfRange {
                context: format!("example {i} label {} >= classes {}", ex.label, cfg.classes),
            });
        }
        labels.push(ex.label);
    }

    let one_hot = |rows: usize, width: usize, ids: &mut dyn Iterator<Item = usize>| {
        let mut t = Tensor::zeros(rows, width);
        for (r, id) in ids.enumerate() {
            t.data[r * width + id] = 1.0;
        }
        t
    };

    match cfg.kind {
        ModelKind::Crossattn => {
            let t = cfg.seq_len;
            let mut a_ids = examples
                .iter()
                .flat_map(|ex| ex.tokens[..t].iter().map(|&x| x as usize));
            tensors.insert("tokens_a".into(), one_hot(b * t, cfg.vocab_size, &mut a_ids));
            let mut b_ids = examples
                .iter()
                .flat_map(|ex| ex.tokens[t..].iter().map(|&x| x as usize));
            tensors.insert("tokens_b".into(), one_hot(b * t, cfg.vocab_size, &mut b_ids));
        }
        _ => {
            let mut ids = examples
                .iter()
                .flat_map(|ex| ex.tokens.iter().map(|&x| x as usize));
            tensors.insert("tokens".into(), one_hot(b * n, cfg.vocab_size, &mut ids));
        }
    }
    let mut label_ids = examples.iter().map(|ex| ex.label);
    tensors.insert("labels".into(), one_hot(b, cfg.classes, &mut label_ids));
    Ok(Batch { tensors, size: b, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(train: usize, test: usize, seed: u64) -> DataSpec {
        DataSpec { train_examples: train, test_examples: test, seed }
    }

    #[test]
    fn sizes_and_disjoint_splits() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let splits = generate(&cfg, &spec(64, 32, 7)).unwrap();
        assert_eq!(splits.train.examples.len(), 64);
        assert_eq!(splits.test.examples.len(), 32);
        let train: BTreeSet<_> = splits.train.examples.iter().map(|e| &e.tokens).collect();
        for ex in &splits.test.examples {
            assert!(!train.contains(&ex.tokens), "test example leaked from train");
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = ModelConfig::with_kind(ModelKind::Hierarchical);
        let a = generate(&cfg, &spec(16, 8, 99)).unwrap();
        let b = generate(&cfg, &spec(16, 8, 99)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn every_example_carries_its_class_marker() {
        let cfg = ModelConfig::with_kind(ModelKind::Crossattn);
        let splits = generate(&cfg, &spec(20, 10, 3)).unwrap();
        let t = cfg.seq_len;
        for ex in splits.train.examples.iter().chain(&splits.test.examples) {
            let marker = (FILLER_TOKENS + ex.label) as u32;
            assert!(ex.tokens[..t].contains(&marker), "stream A missing marker");
            assert!(ex.tokens[t..].contains(&marker), "stream B missing marker");
            let other = (FILLER_TOKENS + 1 - ex.label) as u32;
            assert!(!ex.tokens.contains(&other), "wrong-class marker present");
        }
    }

    #[test]
    fn labels_are_balanced() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let splits = generate(&cfg, &spec(10, 0, 1)).unwrap();
        let ones = splits.train.examples.iter().filter(|e| e.label == 1).count();
        assert_eq!(ones, 5);
    }

    #[test]
    fn vocab_too_small_for_markers_is_rejected() {
        let mut cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        cfg.vocab_size = 11; // 10 filler + 2 markers needs 12
        assert!(generate(&cfg, &spec(4, 0, 0)).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = ModelConfig::with_kind(ModelKind::Hierarchical);
        let splits = generate(&cfg, &spec(8, 0, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_jsonl(&splits.train.examples, &path).unwrap();
        let back = load_jsonl(&path).unwrap();
        assert_eq!(back, splits.train.examples);
    }

    #[test]
    fn loading_missing_file_names_the_artifact() {
        let err = load_jsonl(Path::new("/nonexistent/nowhere.jsonl")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }

    #[test]
    fn batch_one_hot_rows_sum_to_one() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let splits = generate(&cfg, &spec(4, 0, 2)).unwrap();
        let batch = make_batch(&cfg, &splits.train.examples).unwrap();
        let tokens = &batch.tensors["tokens"];
        assert_eq!(tokens.shape(), (4 * cfg.seq_len, cfg.vocab_size));
        for r in 0..tokens.rows {
            assert_eq!(tokens.row(r).iter().sum::<f64>(), 1.0);
        }
        let labels = &batch.tensors["labels"];
        assert_eq!(labels.shape(), (4, cfg.classes));
    }

    #[test]
    fn batch_rejects_wrong_token_count_and_bad_ids() {
        let cfg = ModelConfig::with_kind(ModelKind::Selfattn);
        let short = Example { tokens: vec![0, 1], label: 0 };
        assert!(make_batch(&cfg, &[short]).is_err());
        let bad_id = Example { tokens: vec![99; cfg.seq_len], label: 0 };
        assert!(make_batch(&cfg, &[bad_id]).is_err());
        let bad_label = Example { tokens: vec![0; cfg.seq_len], label: 7 };
        assert!(make_batch(&cfg, &[bad_label]).is_err());
    }
}
