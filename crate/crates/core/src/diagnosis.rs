//! Findings machinery: curvature verdicts per parameter group, coupling
//! rankings, and the targeted learning-rate intervention experiment.
//!
//! This module turns raw spectral measurements into the three report shapes
//! the tool emits: a per-group curvature table with stability labels, an
//! interaction matrix with its cross-group couplings ranked by normalized
//! magnitude, and a before/after record of what a learning-rate intervention
//! on one group did to the strongest coupling and to prediction variability.

use serde::{Deserialize, Serialize};

use crate::linalg::IndexSet;
use crate::models::{make_batch, train, Batch, Dataset, Model, OptimizerConfig};
use crate::perturb::{perturb, prediction_variability};
use crate::spectral::{
    dense_hessian, exact_spectrum, interaction_matrix, spectral_report, InteractionMatrix,
    InteractionMode, Restricted, StochasticConfig, DEFAULT_MAX_ITERS, DEFAULT_PROBES, DEFAULT_SYM_TOL,
    DEFAULT_TOL, DENSE_DIM_GUARD,
};
use crate::{Error, Result};

/// Trace magnitudes at or below this count as numerically flat.
pub const DEFAULT_FLAT_EPS: f64 = 1e-6;

/// Default magnitude of the fixed reference perturbation used to measure
/// prediction variability around an intervention.
pub const DEFAULT_REFERENCE_ALPHA: f64 = 0.1;

// ---------------------------------------------------------------------------
// Curvature classification
// ---------------------------------------------------------------------------

/// Stability verdict for one parameter group's loss-surface curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureLabel {
    ConvexStable,
    ConcaveFragile,
    DegenerateFlat,
}

impl CurvatureLabel {
    /// Human gloss used in the plain-text table's Interpretation column.
    pub fn interpretation(&self) -> &'static str {
        match self {
            CurvatureLabel::ConvexStable => "Convex; stable",
            CurvatureLabel::ConcaveFragile => "Concave; fragile",
            CurvatureLabel::DegenerateFlat => "Degenerate; flat",
        }
    }
}

impl std::fmt::Display for CurvatureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CurvatureLabel::ConvexStable => "convex-stable",
            CurvatureLabel::ConcaveFragile => "concave-fragile",
            CurvatureLabel::DegenerateFlat => "degenerate-flat",
        })
    }
}

/// Classify a group's curvature from its trace.
///
/// The trace sign carries the verdict: within `flat_eps` of zero the surface
/// counts as degenerate-flat, below it concave-fragile, above it
/// convex-stable. The extreme eigenvalues are recorded evidence, not inputs
/// to the rule — a group whose smallest eigenvalue dips slightly negative is
/// still convex-stable when the bulk curvature (the trace) is positive.
///
/// Requires `eigs_min ≤ eigs_max`; pure, total, never errors.
pub fn classify_curvature(
    trace: f64,
    eigs_min: f64,
    eigs_max: f64,
    flat_eps: f64,
) -> CurvatureLabel {
    debug_assert!(
        eigs_min <= eigs_max || eigs_min.is_nan() || eigs_max.is_nan(),
        "extreme eigenvalues out of order"
    );
    if trace.abs() <= flat_eps {
        CurvatureLabel::DegenerateFlat
    } else if trace < 0.0 {
        CurvatureLabel::ConcaveFragile
    } else {
        CurvatureLabel::ConvexStable
    }
}

/// One group's measured curvature and its verdict. The label is a pure
/// function of the stored fields (under the `flat_eps` recorded alongside in
/// [`CurvatureRow`]), so re-deriving it always reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureVerdict {
    pub group: String,
    pub trace: f64,
    pub eigs_min: f64,
    pub eigs_max: f64,
    pub label: CurvatureLabel,
}

// ---------------------------------------------------------------------------
// Estimator selection
// ---------------------------------------------------------------------------

/// How to obtain a group's trace and extreme eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Dense-exact when the group fits under the dense guard, stochastic
    /// otherwise.
    Auto,
    /// Materialize the group's Hessian block and solve it exactly.
    DenseExact,
    /// Probe-based trace and iterative extreme eigenvalues.
    Stochastic,
}

/// Settings shared by every estimator the diagnosis stage runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_mode")]
    pub mode: EstimatorMode,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_lanczos_max_iters")]
    pub lanczos_max_iters: usize,
    #[serde(default = "default_lanczos_tol")]
    pub lanczos_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_flat_eps")]
    pub flat_eps: f64,
    #[serde(default = "default_dense_guard")]
    pub dense_guard: usize,
}

fn default_mode() -> EstimatorMode {
    EstimatorMode::Auto
}
fn default_probes() -> usize {
    DEFAULT_PROBES
}
fn default_lanczos_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_lanczos_tol() -> f64 {
    DEFAULT_TOL
}
fn default_flat_eps() -> f64 {
    DEFAULT_FLAT_EPS
}
fn default_dense_guard() -> usize {
    DENSE_DIM_GUARD
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mode: default_mode(),
            probes: default_probes(),
            lanczos_max_iters: default_lanczos_max_iters(),
            lanczos_tol: default_lanczos_tol(),
            seed: 0,
            flat_eps: default_flat_eps(),
            dense_guard: default_dense_guard(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return Err(Error::InvalidConfig {
                field: "probes".into(),
                message: "at least one probe is required".into(),
            });
        }
        if self.lanczos_max_iters < 2 {
            return Err(Error::InvalidConfig {
                field: "lanczos_max_iters".into(),
                message: "at least two iterations are required".into(),
            });
        }
        if !(self.lanczos_tol > 0.0 && self.lanczos_tol.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "lanczos_tol".into(),
                message: format!("must be a positive finite number, got {}", self.lanczos_tol),
            });
        }
        if !(self.flat_eps >= 0.0 && self.flat_eps.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "flat_eps".into(),
                message: format!("must be a nonnegative finite number, got {}", self.flat_eps),
            });
        }
        if self.dense_guard == 0 {
            return Err(Error::InvalidConfig {
                field: "dense_guard".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Curvature table
// ---------------------------------------------------------------------------

/// One row of the curvature table: the verdict plus everything needed to
/// reproduce it — which estimator ran, with which seeds and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRow {
    pub verdict: CurvatureVerdict,
    /// Resolved estimator (never `Auto`).
    pub mode: EstimatorMode,
    /// Number of parameters in the group.
    pub dim: usize,
    /// Flatness threshold the label was derived under.
    pub flat_eps: f64,
    pub trace_stderr: Option<f64>,
    pub probes: Option<usize>,
    pub probe_seed: Option<u64>,
    pub lanczos_iters: Option<usize>,
    pub lanczos_converged: Option<bool>,
    pub lanczos_seed: Option<u64>,
    /// Asymmetry of the dense block before symmetrization (dense-exact only).
    pub hessian_asymmetry: Option<f64>,
}

/// Measure and classify every requested group's curvature on `batch`.
///
/// Rows come back in the caller's group order, but each row is computed from
/// group-specific derived seeds, so the numbers do not depend on which other
/// groups were requested or in what order. Estimator failures carry the
/// offending group's name.
pub fn curvature_table(
    model: &Model,
    batch: &Batch,
    groups: &[String],
    cfg: &EstimatorConfig,
) -> Result<Vec<CurvatureRow>> {
    cfg.validate()?;
    let mut op = model.hvp_operator(batch)?;
    let mut rows = Vec::with_capacity(groups.len());
    for name in groups {
        let set = model.registry().group(name)?.clone();
        let row =
            curvature_row(&mut op, name, &set, cfg).map_err(|e| e.in_group(name))?;
        rows.push(row);
    }
    Ok(rows)
}

fn curvature_row(
    op: &mut crate::spectral::GraphHvpOperator,
    group: &str,
    set: &IndexSet,
    cfg: &EstimatorConfig,
) -> Result<CurvatureRow> {
    let dim = set.len();
    let dense = match cfg.mode {
        EstimatorMode::Auto => dim <= cfg.dense_guard,
        EstimatorMode::DenseExact => true,
        EstimatorMode::Stochastic => false,
    };
    let mut restricted = Restricted::new(&mut *op, set)?;
    if dense {
        let (h, asymmetry) = dense_hessian(&mut restricted, cfg.dense_guard)?;
        let trace = h.trace();
        let spectrum = exact_spectrum(&h, DEFAULT_SYM_TOL)?;
        let (eigs_min, eigs_max) = (spectrum[0], *spectrum.last().expect("dim ≥ 1"));
        Ok(CurvatureRow {
            verdict: CurvatureVerdict {
                group: group.to_string(),
                trace,
                eigs_min,
                eigs_max,
                label: classify_curvature(trace, eigs_min, eigs_max, cfg.flat_eps),
            },
            mode: EstimatorMode::DenseExact,
            dim,
            flat_eps: cfg.flat_eps,
            trace_stderr: None,
            probes: None,
            probe_seed: None,
            lanczos_iters: None,
            lanczos_converged: None,
            lanczos_seed: None,
            hessian_asymmetry: Some(asymmetry),
        })
    } else {
        let stochastic = StochasticConfig {
            probes: cfg.probes,
            lanczos_max_iters: cfg.lanczos_max_iters,
            lanczos_tol: cfg.lanczos_tol,
            seed: cfg.seed,
        };
        let rep = spectral_report(&mut restricted, group, &stochastic, "")?;
        Ok(CurvatureRow {
            verdict: CurvatureVerdict {
                group: group.to_string(),
                trace: rep.trace,
                eigs_min: rep.eigs_min,
                eigs_max: rep.eigs_max,
                label: classify_curvature(rep.trace, rep.eigs_min, rep.eigs_max, cfg.flat_eps),
            },
            mode: EstimatorMode::Stochastic,
            dim,
            flat_eps: cfg.flat_eps,
            trace_stderr: Some(rep.trace_stderr),
            probes: Some(rep.probes_used),
            probe_seed: Some(rep.probe_seed),
            lanczos_iters: Some(rep.lanczos_iters),
            lanczos_converged: Some(rep.lanczos_converged),
            lanczos_seed: Some(rep.lanczos_seed),
            hessian_asymmetry: None,
        })
    }
}

/// Render curvature rows as an aligned plain-text table with the columns
/// Layer, H.Trace, Extreme Eigenvalues, Interpretation.
pub fn render_curvature_text(rows: &[CurvatureRow]) -> String {
    let headers = ["Layer", "H.Trace", "Extreme Eigenvalues", "Interpretation"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.verdict.group.clone(),
                fmt_num(r.verdict.trace),
                format!("({}, {})", fmt_num(r.verdict.eigs_min), fmt_num(r.verdict.eigs_max)),
                r.verdict.label.interpretation().to_string(),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let render = |cells: [&str; 4], out: &mut String| {
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            out.push_str(cell);
            if i + 1 < cells.len() {
                out.extend(std::iter::repeat_n(' ', w - cell.len() + 2));
            }
        }
        out.push('\n');
    };
    render(headers, &mut out);
    for (w, i) in widths.iter().zip(0..) {
        out.extend(std::iter::repeat_n('-', *w));
        if i + 1 < widths.len() {
            out.push_str("  ");
        }
    }
    out.push('\n');
    for row in &body {
        render([&row[0], &row[1], &row[2], &row[3]], &mut out);
    }
    out
}

/// Fixed-width numeric rendering: plain decimal in the human range,
/// scientific outside it.
fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0.0000".to_string()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        format!("{v:.4}")
    } else {
        format!("{v:.4e}")
    }
}

// ---------------------------------------------------------------------------
// Interaction report
// ---------------------------------------------------------------------------

/// One cross-group coupling, carrying both views of the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub a: String,
    pub b: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Interaction matrix plus its cross-group couplings ranked by |normalized|
/// value, strongest first. The top entry is the coupling the intervention
/// stage tracks by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub matrix: InteractionMatrix,
    pub couplings: Vec<CouplingEntry>,
}

impl InteractionReport {
    /// Strongest cross-group coupling, if the selection had at least two
    /// entries.
    pub fn top(&self) -> Option<&CouplingEntry> {
        self.couplings.first()
    }
}

/// Resolve registry group names into a selection for [`interaction_report`].
pub fn selection_from_groups(
    model: &Model,
    names: &[String],
) -> Result<Vec<(String, IndexSet)>> {
    names
        .iter()
        .map(|n| Ok((n.clone(), model.registry().group(n)?.clone())))
        .collect()
}

/// Compute the interaction matrix over `selection` and rank its cross-group
/// couplings by normalized magnitude (ties broken by label pair, so the
/// ranking is deterministic).
pub fn interaction_report(
    model: &Model,
    batch: &Batch,
    selection: &[(String, IndexSet)],
    mode: InteractionMode,
    guard: usize,
) -> Result<InteractionReport> {
    let mut op = model.hvp_operator(batch)?;
    let matrix = interaction_matrix(&mut op, selection, mode, guard)?;
    let couplings = rank_couplings(&matrix);
    Ok(InteractionReport { matrix, couplings })
}

fn rank_couplings(matrix: &InteractionMatrix) -> Vec<CouplingEntry> {
    let k = matrix.labels.len();
    let mut out = Vec::with_capacity(k * (k.saturating_sub(1)) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            out.push(CouplingEntry {
                a: matrix.labels[i].clone(),
                b: matrix.labels[j].clone(),
                raw: matrix.raw[i][j],
                normalized: matrix.normalized[i][j].expect("off-diagonal cells are defined"),
            });
        }
    }
    out.sort_by(|x, y| {
        y.normalized
            .abs()
            .total_cmp(&x.normalized.abs())
            .then_with(|| (x.a.as_str(), x.b.as_str()).cmp(&(y.a.as_str(), y.b.as_str())))
    });
    out
}

// ---------------------------------------------------------------------------
// Learning-rate intervention
// ---------------------------------------------------------------------------

/// What to change and how to retrain for one intervention experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    /// Group whose learning rate is scaled down.
    pub target_group: String,
    /// Multiplier in (0, 1] applied to the target group's learning rate.
    pub lr_scale: f64,
    /// Optimizer settings for the retraining phase; its `epochs` may be zero
    /// for a measurement-only pass.
    pub retrain: OptimizerConfig,
    /// Coupling to track, as a pair of selection labels. Defaults to the pair
    /// with the largest pre-intervention |normalized| value.
    #[serde(default)]
    pub pair: Option<(String, String)>,
    /// Magnitude of the fixed reference perturbation used for variability.
    #[serde(default = "default_reference_alpha")]
    pub reference_alpha: f64,
    /// Seed of the fixed reference perturbation.
    #[serde(default)]
    pub reference_seed: u64,
}

fn default_reference_alpha() -> f64 {
    DEFAULT_REFERENCE_ALPHA
}

/// Before/after record of one intervention. `coupling_*` is the normalized
/// coefficient of `tracked_pair`; `variability_*` is the prediction-flip
/// fraction under the fixed reference perturbation of the target group.
/// When retraining diverges the report is returned with the after-fields
/// empty and `complete == false` — a diverging intervention is a finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub target_group: String,
    pub lr_scale: f64,
    pub tracked_pair: (String, String),
    pub coupling_before: f64,
    pub coupling_after: Option<f64>,
    pub variability_before: f64,
    pub variability_after: Option<f64>,
    pub retrain_epochs: usize,
    pub reference_alpha: f64,
    pub reference_seed: u64,
    pub complete: bool,
}

/// Measure, retrain with the target group's learning rate scaled by
/// `cfg.lr_scale`, and re-measure.
///
/// The diagnostic batch is the full `data` set; both measurement passes use
/// it, the same `selection`, the same `testset`, and the same reference
/// perturbation `(alpha, seed)`, so before and after are directly comparable.
/// The input model is never touched: retraining happens on an internal copy
/// seeded with the input's parameters. An `lr_scale` of 1 with zero retrain
/// epochs is the identity on every measured quantity.
pub fn run_intervention(
    model: &Model,
    data: &Dataset,
    cfg: &InterventionConfig,
    selection: &[(String, IndexSet)],
    testset: &Batch,
    guard: usize,
) -> Result<InterventionReport> {
    if !(cfg.lr_scale > 0.0 && cfg.lr_scale <= 1.0) {
        return Err(Error::InvalidConfig {
            field: "lr_scale".into(),
            message: format!("must be in (0, 1], got {}", cfg.lr_scale),
        });
    }
    let target = model.registry().group(&cfg.target_group)?.clone();
    let batch = make_batch(model.config(), &data.examples)?;

    // A working copy keeps the caller's model untouched.
    let mut working = Model::from_parts(model.config().clone(), model.params.clone())?;

    let before = interaction_report(&working, &batch, selection, InteractionMode::Normalized, guard)?;
    let (pair_i, pair_j) = resolve_pair(&before, cfg.pair.as_ref())?;
    let tracked_pair =
        (before.matrix.labels[pair_i].clone(), before.matrix.labels[pair_j].clone());
    let coupling_before =
        before.matrix.normalized[pair_i][pair_j].expect("off-diagonal cells are defined");
    let variability_before = reference_variability(&mut working, &target, cfg, testset)?;

    let mut report = InterventionReport {
        target_group: cfg.target_group.clone(),
        lr_scale: cfg.lr_scale,
        tracked_pair,
        coupling_before,
        coupling_after: None,
        variability_before,
        variability_after: None,
        retrain_epochs: cfg.retrain.epochs,
        reference_alpha: cfg.reference_alpha,
        reference_seed: cfg.reference_seed,
        complete: false,
    };

    let mut retrain = cfg.retrain.clone();
    retrain
        .lr_scales
        .entry(cfg.target_group.clone())
        .and_modify(|s| *s *= cfg.lr_scale)
        .or_insert(cfg.lr_scale);
    match train(&mut working, data, &retrain) {
        Ok(_) => {}
        Err(Error::TrainingDiverged { .. }) => return Ok(report),
        Err(e) => return Err(e),
    }

    let after = interaction_report(&working, &batch, selection, InteractionMode::Normalized, guard)?;
    report.coupling_after =
        Some(after.matrix.normalized[pair_i][pair_j].expect("off-diagonal cells are defined"));
    report.variability_after = Some(reference_variability(&mut working, &target, cfg, testset)?);
    report.complete = true;
    Ok(report)
}

/// Prediction variability between `model` and its copy perturbed on `target`
/// by the fixed reference `(alpha, seed)`.
fn reference_variability(
    model: &mut Model,
    target: &IndexSet,
    cfg: &InterventionConfig,
    testset: &Batch,
) -> Result<f64> {
    let noisy = perturb(&model.params, target, cfg.reference_alpha, cfg.reference_seed)?;
    let mut perturbed = Model::from_parts(model.config().clone(), noisy)?;
    prediction_variability(model, &mut perturbed, testset)
}

/// Indices (into the matrix labels) of the tracked pair: the caller's choice
/// when given, otherwise the top-ranked coupling.
fn resolve_pair(
    report: &InteractionReport,
    pair: Option<&(String, String)>,
) -> Result<(usize, usize)> {
    let labels = &report.matrix.labels;
    match pair {
        Some((a, b)) => {
            let find = |name: &str| {
                labels.iter().position(|l| l == name).ok_or_else(|| Error::InvalidConfig {
                    field: "pair".into(),
                    message: format!("'{name}' is not a selection label (have: {})", labels.join(", ")),
                })
            };
            let (i, j) = (find(a)?, find(b)?);
            if i == j {
                return Err(Error::InvalidConfig {
                    field: "pair".into(),
                    message: "a tracked pair needs two distinct labels".into(),
                });
            }
            Ok((i.min(j), i.max(j)))
        }
        None => {
            let top = report.top().ok_or_else(|| Error::InvalidConfig {
                field: "selection".into(),
                message: "tracking a coupling needs at least two selection entries".into(),
            })?;
            let i = labels.iter().position(|l| l == &top.a).expect("label from this matrix");
            let j = labels.iter().position(|l| l == &top.b).expect("label from this matrix");
            Ok((i, j))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        generate, DataSpec, ModelConfig, ModelKind, QuadraticBlock, QuadraticCoupling,
        QuadraticSpec,
    };

    fn quadratic_model(blocks: Vec<QuadraticBlock>, couplings: Vec<QuadraticCoupling>) -> Model {
        let mut cfg = ModelConfig::with_kind(ModelKind::Quadratic);
        cfg.quadratic = Some(QuadraticSpec { blocks, couplings, offset: 0.0 });
        Model::build(cfg).unwrap()
    }

    fn block(name: &str, size: usize, curvature: f64) -> QuadraticBlock {
        QuadraticBlock { name: name.into(), size, curvature, center: 0.0 }
    }

    /// A hierarchical model small enough for dense diagnostics in tests.
    fn small_hierarchical() -> ModelConfig {
        let mut cfg = ModelConfig::with_kind(ModelKind::Hierarchical);
        cfg.embed_dim = 4;
        cfg.sents_per_doc = 2;
        cfg.words_per_sent = 3;
        cfg
    }

    #[test]
    fn classification_keys_on_trace_sign_with_flat_band() {
        let eps = DEFAULT_FLAT_EPS;
        assert_eq!(classify_curvature(0.0, 0.0, 0.0, eps), CurvatureLabel::DegenerateFlat);
        assert_eq!(classify_curvature(eps, -1.0, 1.0, eps), CurvatureLabel::DegenerateFlat);
        assert_eq!(classify_curvature(-eps, -1.0, 1.0, eps), CurvatureLabel::DegenerateFlat);
        assert_eq!(
            classify_curvature(eps * 1.01, -1.0, 1.0, eps),
            CurvatureLabel::ConvexStable
        );
        assert_eq!(
            classify_curvature(-eps * 1.01, -1.0, 1.0, eps),
            CurvatureLabel::ConcaveFragile
        );
    }

    #[test]
    fn reference_measurement_rows_all_classify_correctly() {
        // Eight fixture rows with realistic measured values. Note the rows
        // whose smallest eigenvalue is slightly negative while the verdict is
        // still convex-stable: the trace decides, not strict definiteness.
        use CurvatureLabel::*;
        let rows: [(f64, f64, f64, CurvatureLabel); 8] = [
            (-5.72, -0.4186, 0.4493, ConcaveFragile),
            (2.86, -0.0007, 0.0387, ConvexStable),
            (1.92, -0.0004, 0.0228, ConvexStable),
            (4.37, 0.0095, 0.0583, ConvexStable),
            (-2.11, -0.2016, 0.1274, ConcaveFragile),
            (-2.24, -0.1473, 0.0611, ConcaveFragile),
            (3.12, 0.0049, 0.0483, ConvexStable),
            (1.75, -0.0006, 0.0483, ConvexStable),
        ];
        for (trace, lo, hi, want) in rows {
            assert_eq!(
                classify_curvature(trace, lo, hi, DEFAULT_FLAT_EPS),
                want,
                "trace {trace}"
            );
        }
    }

    #[test]
    fn engineered_quadratic_yields_expected_verdicts() {
        // H = diag(−1, −1, −1, 2, 2, 2, 2): traces −3 and 8 exactly.
        let model = quadratic_model(vec![block("hot", 3, -1.0), block("cold", 4, 2.0)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let groups = vec!["hot".to_string(), "cold".to_string()];
        let rows =
            curvature_table(&model, &batch, &groups, &EstimatorConfig::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].verdict.trace + 3.0).abs() < 1e-8);
        assert_eq!(rows[0].verdict.label, CurvatureLabel::ConcaveFragile);
        assert!((rows[0].verdict.eigs_min + 1.0).abs() < 1e-8);
        assert!((rows[0].verdict.eigs_max + 1.0).abs() < 1e-8);
        assert!((rows[1].verdict.trace - 8.0).abs() < 1e-8);
        assert_eq!(rows[1].verdict.label, CurvatureLabel::ConvexStable);
        assert_eq!(rows[0].mode, EstimatorMode::DenseExact);
        assert!(rows[0].hessian_asymmetry.unwrap() < 1e-10);
    }

    #[test]
    fn dense_and_stochastic_estimators_agree_on_labels() {
        let model = quadratic_model(vec![block("hot", 3, -1.0), block("cold", 4, 2.0)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let groups = vec!["hot".to_string(), "cold".to_string()];
        let dense = EstimatorConfig { mode: EstimatorMode::DenseExact, ..Default::default() };
        let stochastic = EstimatorConfig {
            mode: EstimatorMode::Stochastic,
            probes: 128,
            seed: 17,
            ..Default::default()
        };
        let a = curvature_table(&model, &batch, &groups, &dense).unwrap();
        let b = curvature_table(&model, &batch, &groups, &stochastic).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.verdict.label, y.verdict.label);
            assert_eq!(y.mode, EstimatorMode::Stochastic);
            assert!(y.probe_seed.is_some() && y.lanczos_seed.is_some());
        }

        let cfg = small_hierarchical();
        let splits =
            generate(&cfg, &DataSpec { train_examples: 4, test_examples: 0, seed: 3 }).unwrap();
        let batch = make_batch(&cfg, &splits.train.examples).unwrap();
        let model = Model::build(cfg).unwrap();
        let groups: Vec<String> =
            model.registry().group_names().iter().map(|s| s.to_string()).collect();
        let a = curvature_table(&model, &batch, &groups, &dense).unwrap();
        let b = curvature_table(&model, &batch, &groups, &stochastic).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.verdict.label, y.verdict.label, "group {}", x.verdict.group);
        }
    }

    #[test]
    fn rows_do_not_depend_on_group_evaluation_order() {
        let model = quadratic_model(vec![block("hot", 3, -1.0), block("cold", 4, 2.0)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let cfg = EstimatorConfig {
            mode: EstimatorMode::Stochastic,
            probes: 64,
            seed: 5,
            ..Default::default()
        };
        let forward = curvature_table(
            &model,
            &batch,
            &["hot".to_string(), "cold".to_string()],
            &cfg,
        )
        .unwrap();
        let reverse = curvature_table(
            &model,
            &batch,
            &["cold".to_string(), "hot".to_string()],
            &cfg,
        )
        .unwrap();
        assert_eq!(forward[0], reverse[1]);
        assert_eq!(forward[1], reverse[0]);
    }

    #[test]
    fn estimator_failures_carry_group_context() {
        let model = quadratic_model(vec![block("hot", 3, -1.0)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let cfg = EstimatorConfig {
            mode: EstimatorMode::DenseExact,
            dense_guard: 2,
            ..Default::default()
        };
        let err = curvature_table(&model, &batch, &["hot".to_string()], &cfg).unwrap_err();
        match err {
            Error::GroupContext { group, source } => {
                assert_eq!(group, "hot");
                assert!(matches!(*source, Error::DimGuard { dim: 3, guard: 2 }));
            }
            other => panic!("expected group context, got {other}"),
        }
    }

    #[test]
    fn hierarchical_table_has_exactly_the_attention_rows() {
        let cfg = small_hierarchical();
        let splits =
            generate(&cfg, &DataSpec { train_examples: 4, test_examples: 0, seed: 6 }).unwrap();
        let batch = make_batch(&cfg, &splits.train.examples).unwrap();
        let model = Model::build(cfg).unwrap();
        let groups: Vec<String> =
            model.registry().group_names().iter().map(|s| s.to_string()).collect();
        let rows =
            curvature_table(&model, &batch, &groups, &EstimatorConfig::default()).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.verdict.group.as_str()).collect();
        assert_eq!(names, vec!["sentence_attention", "word_attention"]);
        // The stored fields re-derive the stored label.
        for r in &rows {
            assert_eq!(
                classify_curvature(r.verdict.trace, r.verdict.eigs_min, r.verdict.eigs_max, r.flat_eps),
                r.verdict.label
            );
        }
    }

    #[test]
    fn text_table_lists_every_group_with_its_interpretation() {
        let model = quadratic_model(vec![block("hot", 3, -1.0), block("cold", 4, 2.0)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let rows = curvature_table(
            &model,
            &batch,
            &["hot".to_string(), "cold".to_string()],
            &EstimatorConfig::default(),
        )
        .unwrap();
        let text = render_curvature_text(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4, "header, rule, two rows");
        for header in ["Layer", "H.Trace", "Extreme Eigenvalues", "Interpretation"] {
            assert!(lines[0].contains(header));
        }
        assert!(lines[2].starts_with("hot"));
        assert!(lines[2].contains("Concave; fragile"));
        assert!(lines[3].contains("Convex; stable"));
    }

    #[test]
    fn engineered_cross_term_tops_the_coupling_ranking() {
        // Unit diagonals with a single −0.68 cross term between w2 and s1:
        // the ranking must surface exactly that pair with its signed value.
        let model = quadratic_model(
            vec![block("w1", 1, 1.0), block("w2", 1, 1.0), block("s1", 1, 1.0), block("s2", 1, 1.0)],
            vec![QuadraticCoupling { a: "w2".into(), b: "s1".into(), strength: -0.68 }],
        );
        let batch = make_batch(model.config(), &[]).unwrap();
        let names: Vec<String> = ["w1", "w2", "s1", "s2"].iter().map(|s| s.to_string()).collect();
        let selection = selection_from_groups(&model, &names).unwrap();
        let report = interaction_report(
            &model,
            &batch,
            &selection,
            InteractionMode::Normalized,
            DENSE_DIM_GUARD,
        )
        .unwrap();
        let top = report.top().unwrap();
        assert_eq!((top.a.as_str(), top.b.as_str()), ("w2", "s1"));
        assert!((top.normalized + 0.68).abs() < 1e-9, "normalized {}", top.normalized);
        assert!((top.raw + 0.68).abs() < 1e-9);
        for c in &report.couplings[1..] {
            assert!(c.raw.abs() < 1e-9, "only the engineered pair couples");
        }
    }

    #[test]
    fn block_diagonal_hessian_has_no_cross_couplings() {
        let model = quadratic_model(vec![block("a", 2, 1.5), block("b", 3, -0.5)], vec![]);
        let batch = make_batch(model.config(), &[]).unwrap();
        let selection =
            selection_from_groups(&model, &["a".to_string(), "b".to_string()]).unwrap();
        let report = interaction_report(
            &model,
            &batch,
            &selection,
            InteractionMode::Normalized,
            DENSE_DIM_GUARD,
        )
        .unwrap();
        assert_eq!(report.couplings.len(), 1);
        assert!(report.couplings[0].raw.abs() < 1e-10);
    }

    #[test]
    fn ranking_matches_brute_force_enumeration() {
        // Several engineered couplings of distinct magnitudes; the ranked
        // list must equal an independent sort over the matrix cells.
        let blocks =
            vec![block("a", 1, 1.0), block("b", 1, 1.0), block("c", 1, 1.0), block("d", 1, 1.0)];
        let couplings = vec![
            QuadraticCoupling { a: "a".into(), b: "b".into(), strength: 0.3 },
            QuadraticCoupling { a: "a".into(), b: "c".into(), strength: -0.5 },
            QuadraticCoupling { a: "b".into(), b: "d".into(), strength: 0.2 },
            QuadraticCoupling { a: "c".into(), b: "d".into(), strength: 0.05 },
        ];
        let model = quadratic_model(blocks, couplings);
        let batch = make_batch(model.config(), &[]).unwrap();
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let selection = selection_from_groups(&model, &names).unwrap();
        let report = interaction_report(
            &model,
            &batch,
            &selection,
            InteractionMode::Normalized,
            DENSE_DIM_GUARD,
        )
        .unwrap();

        let mut brute: Vec<(f64, String, String)> = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                brute.push((
                    report.matrix.normalized[i][j].unwrap(),
                    report.matrix.labels[i].clone(),
                    report.matrix.labels[j].clone(),
                ));
            }
        }
        brute.sort_by(|x, y| y.0.abs().total_cmp(&x.0.abs()));
        for (want, got) in brute.iter().zip(&report.couplings) {
            assert_eq!((want.1.as_str(), want.2.as_str()), (got.a.as_str(), got.b.as_str()));
            assert_eq!(want.0, got.normalized);
        }
    }

    fn intervention_fixture() -> (Model, Dataset, Batch, Vec<(String, IndexSet)>) {
        let cfg = small_hierarchical();
        let splits =
            generate(&cfg, &DataSpec { train_examples: 4, test_examples: 4, seed: 12 }).unwrap();
        let testset = make_batch(&cfg, &splits.test.examples).unwrap();
        let model = Model::build(cfg).unwrap();
        let selection = selection_from_groups(
            &model,
            &["word_attention".to_string(), "sentence_attention".to_string()],
        )
        .unwrap();
        (model, splits.train, testset, selection)
    }

    fn retrain(epochs: usize, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            epochs,
            batch_size: 2,
            shuffle_seed: 0,
            lr_scales: Default::default(),
        }
    }

    #[test]
    fn unit_scale_with_zero_retraining_is_the_identity() {
        let (model, data, testset, selection) = intervention_fixture();
        let cfg = InterventionConfig {
            target_group: "word_attention".into(),
            lr_scale: 1.0,
            retrain: retrain(0, 0.1),
            pair: None,
            reference_alpha: 0.1,
            reference_seed: 7,
        };
        let report =
            run_intervention(&model, &data, &cfg, &selection, &testset, DENSE_DIM_GUARD).unwrap();
        assert!(report.complete);
        assert_eq!(report.retrain_epochs, 0);
        assert_eq!(
            report.coupling_after.unwrap().to_bits(),
            report.coupling_before.to_bits(),
            "identical parameters re-measure identically"
        );
        assert_eq!(report.variability_after, Some(report.variability_before));
        assert_eq!(
            report.tracked_pair,
            ("word_attention".to_string(), "sentence_attention".to_string())
        );
    }

    #[test]
    fn divergent_retraining_yields_incomplete_report() {
        let (model, data, testset, selection) = intervention_fixture();
        let cfg = InterventionConfig {
            target_group: "word_attention".into(),
            lr_scale: 1.0,
            retrain: retrain(1, 1e250),
            pair: None,
            reference_alpha: 0.1,
            reference_seed: 7,
        };
        let report =
            run_intervention(&model, &data, &cfg, &selection, &testset, DENSE_DIM_GUARD).unwrap();
        assert!(!report.complete);
        assert!(report.coupling_after.is_none());
        assert!(report.variability_after.is_none());
        assert!(report.coupling_before.is_finite());
        assert!(report.variability_before.is_finite());
    }

    #[test]
    fn intervention_rejects_bad_scales_and_unknown_pairs() {
        let (model, data, testset, selection) = intervention_fixture();
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            let cfg = InterventionConfig {
                target_group: "word_attention".into(),
                lr_scale: bad,
                retrain: retrain(0, 0.1),
                pair: None,
                reference_alpha: 0.1,
                reference_seed: 0,
            };
            assert!(matches!(
                run_intervention(&model, &data, &cfg, &selection, &testset, DENSE_DIM_GUARD),
                Err(Error::InvalidConfig { .. })
            ));
        }
        let cfg = InterventionConfig {
            target_group: "word_attention".into(),
            lr_scale: 0.5,
            retrain: retrain(0, 0.1),
            pair: Some(("word_attention".into(), "nonexistent".into())),
            reference_alpha: 0.1,
            reference_seed: 0,
        };
        assert!(matches!(
            run_intervention(&model, &data, &cfg, &selection, &testset, DENSE_DIM_GUARD),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn tracked_pair_defaults_to_largest_cross_coupling() {
        let cfg = small_hierarchical();
        let splits =
            generate(&cfg, &DataSpec { train_examples: 4, test_examples: 4, seed: 12 }).unwrap();
        let batch = make_batch(&cfg, &splits.train.examples).unwrap();
        let testset = make_batch(&cfg, &splits.test.examples).unwrap();
        let model = Model::build(cfg).unwrap();
        let names: Vec<String> =
            ["word_attention", "sentence_attention", "other"].iter().map(|s| s.to_string()).collect();
        let selection = selection_from_groups(&model, &names).unwrap();
        let expected = interaction_report(
            &model,
            &batch,
            &selection,
            InteractionMode::Normalized,
            DENSE_DIM_GUARD,
        )
        .unwrap();
        let top = expected.top().unwrap();

        let cfg = InterventionConfig {
            target_group: "word_attention".into(),
            lr_scale: 1.0,
            retrain: retrain(0, 0.1),
            pair: None,
            reference_alpha: 0.1,
            reference_seed: 1,
        };
        let report = run_intervention(
            &model,
            &splits.train,
            &cfg,
            &selection,
            &testset,
            DENSE_DIM_GUARD,
        )
        .unwrap();
        assert_eq!(report.tracked_pair, (top.a.clone(), top.b.clone()));
        assert_eq!(report.coupling_before, top.normalized);
    }
}
