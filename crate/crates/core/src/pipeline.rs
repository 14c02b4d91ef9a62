//! Run orchestration: one structured config file in, a bundle of report
//! artifacts out.
//!
//! A [`RunConfig`] fully determines a run. Each stage (train, curvature,
//! perturb, interact, intervene, report) reads the artifacts earlier stages
//! left in the run's output directory and writes its own. Every payload file
//! is deterministic — two executions of the same config produce byte-identical
//! bytes — and wall-clock times live only in a sidecar the payload never
//! references. JSON artifacts carry a schema version and are validated on
//! write (serialize → parse back → re-serialize must reproduce the bytes) and
//! on read; CSV artifacts get the same round-trip treatment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnosis::{
    curvature_table, interaction_report, render_curvature_text, run_intervention,
    selection_from_groups, CurvatureRow, EstimatorConfig, InteractionReport, InterventionConfig,
    InterventionReport,
};
use crate::models::{
    checkpoint, generate, make_batch, train, Batch, DataSpec, Model, ModelConfig, ModelKind,
    OptimizerConfig, TrainingTrace,
};
use crate::perturb::{sweep, PerturbationSpec, PerturbationTrial};
use crate::spectral::InteractionMode;
use crate::{Error, Result};

/// Version stamped into every JSON artifact this tool writes.
pub const SCHEMA_VERSION: u32 = 1;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAINING_TRACE_FILE: &str = "training_trace.csv";
pub const CURVATURE_JSON_FILE: &str = "curvature.json";
pub const CURVATURE_TEXT_FILE: &str = "curvature.txt";
pub const INTERACTION_FILE: &str = "interaction.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const INTERVENTION_FILE: &str = "intervention.json";
pub const RUN_META_FILE: &str = "run_meta.json";
pub const SUMMARY_FILE: &str = "summary.txt";
/// Wall-clock sidecar; the only file allowed to differ between two runs of
/// the same config.
pub const TIMESTAMPS_FILE: &str = "timestamps.json";

/// Every deterministic artifact a full run can produce, in pipeline order.
pub const PAYLOAD_FILES: &[&str] = &[
    CHECKPOINT_FILE,
    TRAINING_TRACE_FILE,
    CURVATURE_JSON_FILE,
    CURVATURE_TEXT_FILE,
    INTERACTION_FILE,
    TRIALS_FILE,
    INTERVENTION_FILE,
    RUN_META_FILE,
    SUMMARY_FILE,
];

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Seed overrides applied on top of whatever the individual sections say.
/// A field left unset leaves the corresponding section's own seed alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Parameter-initialization seed (overrides `model.init_seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<u64>,
    /// Data-generation seed (overrides `data.seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    /// Perturbation-noise seed (overrides every perturbation spec's
    /// `noise_seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<u64>,
    /// Estimator seed for trace probes and eigenvalue iterations (overrides
    /// `estimators.seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<u64>,
}

/// Which groups enter the interaction matrix and in which view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    /// Selection labels, resolved through the model's group registry. Empty
    /// means every attention group, in registry order.
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default = "default_interaction_mode")]
    pub mode: InteractionMode,
}

fn default_interaction_mode() -> InteractionMode {
    InteractionMode::Normalized
}

impl Default for InteractionSection {
    fn default() -> Self {
        InteractionSection { groups: Vec::new(), mode: default_interaction_mode() }
    }
}

/// Everything that determines a run. Two executions of the same config
/// produce byte-identical payload files; wall-clock times go to the
/// [`TIMESTAMPS_FILE`] sidecar only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory all artifacts are written to.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataSpec,
    pub train: OptimizerConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbation: Vec<PerturbationSpec>,
    #[serde(default)]
    pub interaction: InteractionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run-output")
}

impl RunConfig {
    /// Parse a config from TOML text.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))
    }

    /// Load a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact { path: path.display().to_string() }
            }
            _ => Error::Io(e),
        })?;
        RunConfig::from_toml_str(&text)
    }

    /// Render as TOML (the `defaults` subcommand's output).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format { message: e.to_string() })
    }

    /// The config with the `[seeds]` overrides pushed down into their
    /// sections. Idempotent; every stage operates on the effective config,
    /// and the metadata echo records it.
    pub fn effective(&self) -> RunConfig {
        let mut cfg = self.clone();
        if let Some(s) = cfg.seeds.init {
            cfg.model.init_seed = s;
        }
        if let Some(s) = cfg.seeds.data {
            cfg.data.seed = s;
        }
        if let Some(s) = cfg.seeds.noise {
            for spec in &mut cfg.perturbation {
                spec.noise_seed = s;
            }
        }
        if let Some(s) = cfg.seeds.probe {
            cfg.estimators.seed = s;
        }
        cfg
    }

    /// Check every section that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.estimators.validate()?;
        for spec in &self.perturbation {
            spec.validate()?;
        }
        Ok(())
    }

    /// The interaction/intervention selection labels: the configured groups,
    /// or every attention group when none are configured.
    fn selection_names(&self, model: &Model) -> Vec<String> {
        if self.interaction.groups.is_empty() {
            model.registry().group_names().iter().map(|s| s.to_string()).collect()
        } else {
            self.interaction.groups.clone()
        }
    }
}

/// A fully specified reference configuration exercising every stage: a small
/// hierarchical model trained to convergence, dense-capable estimators, one
/// perturbation sweep per attention group, and a word-attention intervention.
pub fn default_run_config() -> RunConfig {
    let model = ModelConfig::with_kind(ModelKind::Hierarchical);
    let retrain = OptimizerConfig {
        learning_rate: 0.5,
        epochs: 10,
        batch_size: 4,
        shuffle_seed: 0,
        lr_scales: BTreeMap::new(),
    };
    RunConfig {
        output_dir: default_output_dir(),
        data: DataSpec { train_examples: 16, test_examples: 8, seed: 0 },
        train: OptimizerConfig { epochs: 40, ..retrain.clone() },
        seeds: Seeds { init: Some(0), data: Some(0), noise: Some(0), probe: Some(0) },
        estimators: EstimatorConfig::default(),
        perturbation: ["word_attention", "sentence_attention"]
            .iter()
            .map(|g| PerturbationSpec {
                group: g.to_string(),
                alphas: crate::perturb::DEFAULT_ALPHAS.to_vec(),
                trials_per_alpha: crate::perturb::DEFAULT_TRIALS_PER_ALPHA,
                noise_seed: 0,
            })
            .collect(),
        interaction: InteractionSection::default(),
        intervention: Some(InterventionConfig {
            target_group: "word_attention".into(),
            lr_scale: 0.1,
            retrain,
            pair: None,
            reference_alpha: crate::diagnosis::DEFAULT_REFERENCE_ALPHA,
            reference_seed: 0,
        }),
        model,
    }
}

// ---------------------------------------------------------------------------
// Artifact IO
// ---------------------------------------------------------------------------

/// Envelope every JSON artifact is written in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactEnvelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub payload: T,
}

/// Serialize, prove the bytes parse back and re-serialize identically, then
/// write. The round trip catches any field a reader could not recover (for
/// example a non-finite float, which JSON would silently turn into null).
pub fn write_json_artifact<T>(path: &Path, kind: &str, payload: &T) -> Result<()>
where
    T: Serialize + DeserializeOwned,
{
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        schema_version: u32,
        kind: &'a str,
        payload: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Borrowed {
        schema_version: SCHEMA_VERSION,
        kind,
        payload,
    })?;
    text.push('\n');
    let parsed: ArtifactEnvelope<T> = serde_json::from_str(&text).map_err(|e| Error::Format {
        message: format!("{} failed write-time validation: {e}", path.display()),
    })?;
    let mut again = serde_json::to_string_pretty(&parsed)?;
    again.push('\n');
    if again != text {
        return Err(Error::Format {
            message: format!("{} is not round-trip stable", path.display()),
        });
    }
    fs::write(path, text)?;
    Ok(())
}

/// Read a JSON artifact, checking the envelope's schema version and kind.
pub fn read_json_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = read_artifact_text(path)?;
    let envelope: ArtifactEnvelope<T> =
        serde_json::from_str(&text).map_err(|e| Error::Format {
            message: format!("{}: {e}", path.display()),
        })?;
    if envelope.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            expected: SCHEMA_VERSION,
            found: envelope.schema_version,
        });
    }
    if envelope.kind != kind {
        return Err(Error::Format {
            message: format!(
                "{}: expected kind '{kind}', found '{}'",
                path.display(),
                envelope.kind
            ),
        });
    }
    Ok(envelope.payload)
}

fn read_artifact_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::MissingArtifact { path: path.display().to_string() }
        }
        _ => Error::Io(e),
    })
}

/// Write rows as CSV with a header, after proving the bytes parse back into
/// the same rows (byte-compared through a second serialization, so NaN cells
/// in divergence rows round-trip too).
pub fn write_csv_rows<T>(path: &Path, rows: &[T]) -> Result<()>
where
    T: Serialize + DeserializeOwned,
{
    let bytes = csv_bytes(rows)?;
    let parsed: Vec<T> = csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    if csv_bytes(&parsed)? != bytes {
        return Err(Error::Format {
            message: format!("{} is not round-trip stable", path.display()),
        });
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer.into_inner().map_err(|e| Error::Format { message: e.to_string() })
}

/// Read a CSV artifact written by [`write_csv_rows`].
pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_artifact_text(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::Csv)
}

/// Upsert this stage's completion time into the wall-clock sidecar.
fn stamp(out: &Path, stage: &str) -> Result<()> {
    let path = out.join(TIMESTAMPS_FILE);
    let mut stamps: BTreeMap<String, u64> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    stamps.insert(format!("{stage}_completed_unix_ms"), now);
    let mut text = serde_json::to_string_pretty(&stamps)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Run metadata
// ---------------------------------------------------------------------------

/// Deterministic record of what produced this output directory: tool
/// version and the effective config (seed overrides already applied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub tool_version: String,
    pub config: RunConfig,
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Generate data, train, and write the checkpoint, the per-epoch trace, and
/// the run metadata echo.
pub fn run_train(config: &RunConfig) -> Result<TrainingTrace> {
    let cfg = config.effective();
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let splits = generate(&cfg.model, &cfg.data)?;
    let mut model = Model::build(cfg.model.clone())?;
    let trace = train(&mut model, &splits.train, &cfg.train)?;
    checkpoint::save(&model, &out.join(CHECKPOINT_FILE))?;
    write_csv_rows(&out.join(TRAINING_TRACE_FILE), &trace.epochs)?;
    let meta = RunMeta { tool_version: env!("CARGO_PKG_VERSION").to_string(), config: cfg.clone() };
    write_json_artifact(&out.join(RUN_META_FILE), "run_meta", &meta)?;
    stamp(out, "train")?;
    Ok(trace)
}

/// Load the checkpoint this run trained, verifying it matches the config.
fn load_checkpoint(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.output_dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.display().to_string() });
    }
    let model = checkpoint::load(&path)?;
    if model.config() != &cfg.model {
        return Err(Error::InvalidConfig {
            field: "model".into(),
            message: "checkpoint was trained under a different model config".into(),
        });
    }
    Ok(model)
}

/// The batch every diagnostic stage measures on: the full training split.
fn diagnostic_batch(cfg: &RunConfig, model: &Model) -> Result<Batch> {
    let splits = generate(&cfg.model, &cfg.data)?;
    make_batch(model.config(), &splits.train.examples)
}

/// Measure and classify every attention group's curvature, writing the JSON
/// rows and the aligned text table.
pub fn run_curvature(config: &RunConfig) -> Result<Vec<CurvatureRow>> {
    let cfg = config.effective();
    cfg.validate()?;
    let model = load_checkpoint(&cfg)?;
    let batch = diagnostic_batch(&cfg, &model)?;
    let groups: Vec<String> =
        model.registry().group_names().iter().map(|s| s.to_string()).collect();
    let rows = curvature_table(&model, &batch, &groups, &cfg.estimators)?;
    let out = &cfg.output_dir;
    write_json_artifact(&out.join(CURVATURE_JSON_FILE), "curvature", &rows)?;
    fs::write(out.join(CURVATURE_TEXT_FILE), render_curvature_text(&rows))?;
    stamp(out, "curvature")?;
    Ok(rows)
}

/// Run every configured perturbation sweep and write the trial rows.
pub fn run_perturb(config: &RunConfig) -> Result<Vec<PerturbationTrial>> {
    let cfg = config.effective();
    cfg.validate()?;
    if cfg.perturbation.is_empty() {
        return Err(Error::InvalidConfig {
            field: "perturbation".into(),
            message: "no perturbation sweeps configured".into(),
        });
    }
    let mut model = load_checkpoint(&cfg)?;
    let splits = generate(&cfg.model, &cfg.data)?;
    let batch = make_batch(model.config(), &splits.train.examples)?;
    let testset = if cfg.data.test_examples > 0 {
        Some(make_batch(model.config(), &splits.test.examples)?)
    } else {
        None
    };
    let mut trials = Vec::new();
    for spec in &cfg.perturbation {
        trials.extend(sweep(&mut model, &batch, spec, testset.as_ref())?);
    }
    let out = &cfg.output_dir;
    write_csv_rows(&out.join(TRIALS_FILE), &trials)?;
    stamp(out, "perturb")?;
    Ok(trials)
}

/// Compute the interaction matrix over the configured selection and write it
/// with its ranked couplings.
pub fn run_interact(config: &RunConfig) -> Result<InteractionReport> {
    let cfg = config.effective();
    cfg.validate()?;
    let model = load_checkpoint(&cfg)?;
    let batch = diagnostic_batch(&cfg, &model)?;
    let selection = selection_from_groups(&model, &cfg.selection_names(&model))?;
    let report = interaction_report(
        &model,
        &batch,
        &selection,
        cfg.interaction.mode,
        cfg.estimators.dense_guard,
    )?;
    let out = &cfg.output_dir;
    write_json_artifact(&out.join(INTERACTION_FILE), "interaction", &report)?;
    stamp(out, "interact")?;
    Ok(report)
}

/// Run the configured learning-rate intervention and write its report.
pub fn run_intervene(config: &RunConfig) -> Result<InterventionReport> {
    let cfg = config.effective();
    cfg.validate()?;
    let Some(intervention) = &cfg.intervention else {
        return Err(Error::InvalidConfig {
            field: "intervention".into(),
            message: "no intervention configured".into(),
        });
    };
    if cfg.data.test_examples == 0 {
        return Err(Error::InvalidConfig {
            field: "data.test_examples".into(),
            message: "the intervention's variability measurement needs a test split".into(),
        });
    }
    let model = load_checkpoint(&cfg)?;
    let splits = generate(&cfg.model, &cfg.data)?;
    let testset = make_batch(model.config(), &splits.test.examples)?;
    let selection = selection_from_groups(&model, &cfg.selection_names(&model))?;
    let report = run_intervention(
        &model,
        &splits.train,
        intervention,
        &selection,
        &testset,
        cfg.estimators.dense_guard,
    )?;
    let out = &cfg.output_dir;
    write_json_artifact(&out.join(INTERVENTION_FILE), "intervention", &report)?;
    stamp(out, "intervene")?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Summary report
// ---------------------------------------------------------------------------

/// Assemble `summary.txt` from the artifacts already in `out`.
///
/// Numbers are copied from the artifact files, never recomputed; a section
/// whose artifact is absent gets an explicit "not run" marker. Only the
/// metadata echo is required.
pub fn run_report(out: &Path) -> Result<String> {
    let meta: RunMeta = read_json_artifact(&out.join(RUN_META_FILE), "run_meta")?;
    let mut s = String::new();
    s.push_str("Attention curvature run summary\n");
    s.push_str("===============================\n");
    let kind = serde_json::to_value(meta.config.model.kind)?;
    s.push_str(&format!(
        "tool version {} | schema version {} | model kind {}\n",
        meta.tool_version,
        SCHEMA_VERSION,
        kind.as_str().unwrap_or("?")
    ));
    s.push_str(&format!(
        "data: {} train / {} test examples (seed {}) | training: {} epochs, learning rate {}, batch size {}\n",
        meta.config.data.train_examples,
        meta.config.data.test_examples,
        meta.config.data.seed,
        meta.config.train.epochs,
        meta.config.train.learning_rate,
        meta.config.train.batch_size,
    ));

    s.push_str("\n== Curvature ==\n");
    match read_json_artifact::<Vec<CurvatureRow>>(&out.join(CURVATURE_JSON_FILE), "curvature") {
        Ok(rows) => s.push_str(&render_curvature_text(&rows)),
        Err(Error::MissingArtifact { .. }) => s.push_str("not run\n"),
        Err(e) => return Err(e),
    }

    s.push_str("\n== Interactions ==\n");
    match read_json_artifact::<InteractionReport>(&out.join(INTERACTION_FILE), "interaction") {
        Ok(report) => {
            s.push_str(&format!("selection: {}\n", report.matrix.labels.join(", ")));
            for c in &report.couplings {
                s.push_str(&format!(
                    "{} x {}: normalized {} (raw {})\n",
                    c.a, c.b, c.normalized, c.raw
                ));
            }
        }
        Err(Error::MissingArtifact { .. }) => s.push_str("not run\n"),
        Err(e) => return Err(e),
    }

    s.push_str("\n== Perturbation sweeps ==\n");
    match read_csv_rows::<PerturbationTrial>(&out.join(TRIALS_FILE)) {
        Ok(trials) => {
            if trials.is_empty() {
                s.push_str("no trials recorded\n");
            } else {
                s.push_str(&format!("baseline loss {}\n", trials[0].loss_base));
                // Group rows by sweep group, preserving file order.
                let mut order: Vec<&str> = Vec::new();
                for t in &trials {
                    if !order.contains(&t.group.as_str()) {
                        order.push(&t.group);
                    }
                }
                for group in order {
                    let rows: Vec<&PerturbationTrial> =
                        trials.iter().filter(|t| t.group == group).collect();
                    let mut alphas: Vec<f64> = Vec::new();
                    for t in &rows {
                        if !alphas.iter().any(|a| a.to_bits() == t.alpha.to_bits()) {
                            alphas.push(t.alpha);
                        }
                    }
                    let diverged = rows.iter().filter(|t| t.diverged).count();
                    let alphas: Vec<String> = alphas.iter().map(|a| a.to_string()).collect();
                    s.push_str(&format!(
                        "{group}: {} trials over alphas [{}], {diverged} diverged\n",
                        rows.len(),
                        alphas.join(", "),
                    ));
                }
            }
        }
        Err(Error::MissingArtifact { .. }) => s.push_str("not run\n"),
        Err(e) => return Err(e),
    }

    s.push_str("\n== Intervention ==\n");
    match read_json_artifact::<InterventionReport>(&out.join(INTERVENTION_FILE), "intervention") {
        Ok(r) => {
            s.push_str(&format!(
                "target group {} | learning-rate scale {} | retrain epochs {}\n",
                r.target_group, r.lr_scale, r.retrain_epochs
            ));
            s.push_str(&format!("tracked pair: {} x {}\n", r.tracked_pair.0, r.tracked_pair.1));
            let after = |v: Option<f64>| match v {
                Some(v) => v.to_string(),
                None => "not measured".to_string(),
            };
            s.push_str(&format!(
                "coupling (normalized): {} -> {}\n",
                r.coupling_before,
                after(r.coupling_after)
            ));
            s.push_str(&format!(
                "prediction variability: {} -> {} (reference alpha {}, seed {})\n",
                r.variability_before,
                after(r.variability_after),
                r.reference_alpha,
                r.reference_seed
            ));
            s.push_str(&format!(
                "status: {}\n",
                if r.complete { "complete" } else { "incomplete (retraining diverged)" }
            ));
        }
        Err(Error::MissingArtifact { .. }) => s.push_str("not run\n"),
        Err(e) => return Err(e),
    }

    fs::write(out.join(SUMMARY_FILE), &s)?;
    stamp(out, "report")?;
    Ok(s)
}
