//! Controlled fault injection.
//!
//! Gaussian parameter perturbations restricted to a named parameter group,
//! magnitude sweeps that compare every trial against an unperturbed baseline,
//! and prediction-variability measurement between two models on a fixed test
//! batch.
//!
//! Perturbations are always applied to a copy of the parameters; the model
//! under test is restored bit-for-bit when a sweep returns. A non-finite loss
//! under perturbation is a finding, not a failure: the trial is recorded with
//! a divergence flag and the sweep continues.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{FlatVector, IndexSet};
use crate::models::{Batch, Model};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Default magnitude grid: spans from well below round-off relative to unit
/// parameters up to clearly destabilizing on desk-scale models.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5];

/// Default number of independent noise draws per magnitude.
pub const DEFAULT_TRIALS_PER_ALPHA: usize = 16;

// ---------------------------------------------------------------------------
// Sweep specification and trial records
// ---------------------------------------------------------------------------

/// One perturbation experiment: which group to perturb, at which magnitudes,
/// how many independent draws per magnitude, and the root noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Parameter group whose coordinates receive noise (`"other"` selects the
    /// ungrouped remainder).
    pub group: String,
    /// Magnitudes, strictly ascending and nonnegative. A leading `0.0` acts
    /// as an explicit baseline row.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Independent noise draws per magnitude; at least 1.
    #[serde(default = "default_trials_per_alpha")]
    pub trials_per_alpha: usize,
    /// Root seed; each trial derives its own stream from this.
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

fn default_trials_per_alpha() -> usize {
    DEFAULT_TRIALS_PER_ALPHA
}

impl PerturbationSpec {
    /// Checks the magnitude grid and trial count.
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidConfig {
                field: "alphas".into(),
                message: "at least one magnitude is required".into(),
            });
        }
        for &a in &self.alphas {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidConfig {
                    field: "alphas".into(),
                    message: format!("magnitudes must be finite and nonnegative, got {a}"),
                });
            }
        }
        if self.alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig {
                field: "alphas".into(),
                message: "magnitudes must be strictly ascending".into(),
            });
        }
        if self.trials_per_alpha == 0 {
            return Err(Error::InvalidConfig {
                field: "trials_per_alpha".into(),
                message: "at least one trial per magnitude is required".into(),
            });
        }
        Ok(())
    }
}

/// Outcome of a single perturbation trial, compared against the shared
/// unperturbed baseline. Serializes to one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTrial {
    /// Perturbed group.
    pub group: String,
    /// Magnitude used for this trial.
    pub alpha: f64,
    /// Derived seed that generated this trial's noise.
    pub trial_seed: u64,
    /// Loss at the unperturbed parameters.
    pub loss_base: f64,
    /// Loss at the perturbed parameters (NaN when the trial diverged).
    pub loss_perturbed: f64,
    /// Gradient norm over the perturbed group at the unperturbed parameters.
    pub grad_norm_base: f64,
    /// Gradient norm over the perturbed group at the perturbed parameters
    /// (NaN when the trial diverged).
    pub grad_norm_perturbed: f64,
    /// Fraction of test predictions that flipped vs. the baseline; `None`
    /// when no test batch was supplied or the trial diverged.
    pub variability: Option<f64>,
    /// True when evaluation under the perturbation produced a non-finite
    /// value. Divergence is a recorded outcome, never an abort.
    pub diverged: bool,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Returns `params + alpha·δ` where `δ` has independent standard-normal
/// entries on `group` and zeros elsewhere. The input is untouched; the noise
/// is a pure function of `seed`.
///
/// `alpha == 0` or an empty group returns a bit-identical copy — the additive
/// path is skipped entirely so that even the sign of a negative zero
/// coordinate survives.
pub fn perturb(params: &FlatVector, group: &IndexSet, alpha: f64, seed: u64) -> Result<FlatVector> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidConfig {
            field: "alpha".into(),
            message: format!("magnitude must be nonnegative, got {alpha}"),
        });
    }
    group.check_bounds(params.dim())?;
    let mut out = params.clone();
    if alpha == 0.0 || group.is_empty() {
        return Ok(out);
    }
    let mut draws = rng::stream(seed, &[]);
    for i in group.iter() {
        let z: f64 = draws.sample(StandardNormal);
        out.0[i] += alpha * z;
    }
    Ok(out)
}

/// Runs the full magnitude sweep described by `spec` on `model`.
///
/// The baseline loss, gradient norm, and (when `testset` is given) baseline
/// predictions are computed once at the current parameters. Every trial then
/// perturbs a fresh copy by [`perturb`] with its own derived seed, records
/// loss and restricted gradient norm, and measures the fraction of test
/// predictions that flipped. Trials are emitted ordered by
/// (magnitude index, trial index) with pairwise-distinct seeds.
///
/// The model's parameters are restored bit-for-bit before returning, on both
/// success and error.
pub fn sweep(
    model: &mut Model,
    batch: &Batch,
    spec: &PerturbationSpec,
    testset: Option<&Batch>,
) -> Result<Vec<PerturbationTrial>> {
    spec.validate()?;
    let group = model.registry().group(&spec.group)?.clone();
    let (loss_base, grad_base) = model.loss_and_gradient(batch)?;
    let grad_norm_base = grad_base.restricted_norm(&group);
    let base_predictions = match testset {
        Some(t) => Some(model.predict(t)?),
        None => None,
    };
    let base_params = model.params.clone();
    let out = run_trials(
        model,
        batch,
        spec,
        testset,
        &group,
        loss_base,
        grad_norm_base,
        base_predictions.as_deref(),
        &base_params,
    );
    model.params = base_params;
    out
}

#[allow(clippy::too_many_arguments)]
fn run_trials(
    model: &mut Model,
    batch: &Batch,
    spec: &PerturbationSpec,
    testset: Option<&Batch>,
    group: &IndexSet,
    loss_base: f64,
    grad_norm_base: f64,
    base_predictions: Option<&[usize]>,
    base_params: &FlatVector,
) -> Result<Vec<PerturbationTrial>> {
    let mut trials = Vec::with_capacity(spec.alphas.len() * spec.trials_per_alpha);
    for (alpha_idx, &alpha) in spec.alphas.iter().enumerate() {
        for trial_idx in 0..spec.trials_per_alpha {
            let trial_seed = rng::mix(
                spec.noise_seed,
                &[purpose::PERTURB, alpha_idx as u64, trial_idx as u64],
            );
            model.params = perturb(base_params, group, alpha, trial_seed)?;
            let mut trial = PerturbationTrial {
                group: spec.group.clone(),
                alpha,
                trial_seed,
                loss_base,
                loss_perturbed: f64::NAN,
                grad_norm_base,
                grad_norm_perturbed: f64::NAN,
                variability: None,
                diverged: false,
            };
            match model.loss_and_gradient(batch) {
                Ok((loss, grad)) => {
                    trial.loss_perturbed = loss;
                    trial.grad_norm_perturbed = grad.restricted_norm(group);
                    if let (Some(t), Some(base)) = (testset, base_predictions) {
                        match model.predict(t) {
                            Ok(predicted) => {
                                trial.variability = Some(disagreement(&predicted, base));
                            }
                            Err(Error::NonFinite { .. }) => trial.diverged = true,
                            Err(e) => return Err(e),
                        }
                    }
                }
                Err(Error::NonFinite { .. }) => trial.diverged = true,
                Err(e) => return Err(e),
            }
            trials.push(trial);
        }
    }
    Ok(trials)
}

/// Fraction of test examples where the two models' predicted labels differ.
///
/// Both models must share a configuration; the test batch must be nonempty.
/// Comparing a model against itself is exactly zero.
pub fn prediction_variability(
    base: &mut Model,
    perturbed: &mut Model,
    testset: &Batch,
) -> Result<f64> {
    if base.config() != perturbed.config() {
        return Err(Error::InvalidConfig {
            field: "config".into(),
            message: "models must share a configuration to compare predictions".into(),
        });
    }
    if testset.size == 0 {
        return Err(Error::InvalidConfig {
            field: "testset".into(),
            message: "prediction variability needs a nonempty test batch".into(),
        });
    }
    let a = base.predict(testset)?;
    let b = perturbed.predict(testset)?;
    Ok(disagreement(&a, &b))
}

/// Fraction of positions where two equal-length label sequences differ.
fn disagreement(a: &[usize], b: &[usize]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let differing = a.iter().zip(b).filter(|(x, y)| x != y).count();
    differing as f64 / a.len() as f64
}
