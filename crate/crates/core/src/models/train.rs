//! Plain SGD with per-group learning-rate scales.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{make_batch, Batch, Dataset};
use super::model::Model;
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// SGD settings. `lr_scales` multiplies the global rate on named groups
/// (`"other"` addresses the non-attention parameters); a scale of 0 freezes a
/// group exactly — the lever the intervention stage pulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub lr_scales: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch losses seen during the epoch.
    pub mean_loss: f64,
    /// Training accuracy after the epoch (absent for the quadratic
    /// surrogate, which has no classifier).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.accuracy)
    }
}

/// Run SGD in place on `model`, returning the per-epoch trace.
///
/// Identical (model, data, optimizer) inputs reproduce identical parameters
/// bit for bit: shuffles come from the per-epoch stream
/// `(shuffle_seed, SHUFFLE, epoch)` and nothing else is stochastic. A
/// non-finite loss or update aborts with the failing epoch/batch coordinates.
pub fn train(model: &mut Model, data: &Dataset, opt: &OptimizerConfig) -> Result<TrainingTrace> {
    if !opt.learning_rate.is_finite() || opt.learning_rate < 0.0 {
        return Err(Error::InvalidConfig {
            field: "learning_rate".into(),
            message: format!("must be finite and nonnegative, got {}", opt.learning_rate),
        });
    }
    if opt.batch_size == 0 {
        return Err(Error::InvalidConfig {
            field: "batch_size".into(),
            message: "must be positive".into(),
        });
    }
    let n = data.examples.len();
    if !n.is_multiple_of(opt.batch_size) {
        return Err(Error::InvalidConfig {
            field: "batch_size".into(),
            message: format!("{} does not divide the {n} training examples", opt.batch_size),
        });
    }
    let step = model.registry().scale_vector(opt.learning_rate, &opt.lr_scales)?;

    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opt.epochs {
        let mut r = rng::stream(opt.shuffle_seed, &[purpose::SHUFFLE, epoch as u64]);
        order.shuffle(&mut r);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(opt.batch_size).enumerate() {
            let examples: Vec<_> = chunk.iter().map(|&i| data.examples[i].clone()).collect();
            let batch = make_batch(model.config(), &examples)?;
            let (loss, grad) = model
                .loss_and_gradient(&batch)
                .map_err(|e| diverged(e, epoch, batch_idx))?;
            for ((p, g), s) in model.params.0.iter_mut().zip(&grad.0).zip(&step) {
                *p -= s * g;
            }
            if !model.params.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: batch_idx });
            }
            loss_sum += loss;
            batches += 1;
        }

        let (mean_loss, accuracy) = if batches == 0 {
            // Data-free model (quadratic surrogate): report the current loss.
            let empty = make_batch(model.config(), &[])?;
            (model.loss(&empty).map_err(|e| diverged(e, epoch, 0))?, None)
        } else {
            let acc = full_batch(model, data)
                .and_then(|b| model.accuracy(&b))
                .ok();
            (loss_sum / batches as f64, acc)
        };
        trace.epochs.push(EpochStats { epoch, mean_loss, accuracy });
    }
    Ok(trace)
}

fn full_batch(model: &Model, data: &Dataset) -> Result<Batch> {
    make_batch(model.config(), &data.examples)
}

/// Numerical failures during training carry the epoch/batch coordinates;
/// everything else passes through unchanged.
fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::TrainingDiverged { epoch, batch },
        other => other,
    }
}
