//! Off-diagonal coupling analysis between selected parameters or groups.

use serde::{Deserialize, Serialize};

use super::dense::dense_hessian;
use super::operator::{CurvatureOperator, Restricted};
use crate::error::{Error, Result};
use crate::linalg::IndexSet;

/// Which view a report treats as primary; both are always computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    Raw,
    Normalized,
}

/// Pairwise curvature couplings over a disjoint selection of parameter sets.
///
/// `raw[i][j]` is the Hessian entry itself when both selections are single
/// indices, otherwise the signed largest-magnitude entry of the cross block.
/// `normalized[i][j] = raw[i][j] / √(|raw[i][i]|·|raw[j][j]| + 1e-12)`,
/// clamped to [−1, 1]; its diagonal is undefined and stored as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub labels: Vec<String>,
    pub sizes: Vec<usize>,
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<Option<f64>>>,
    pub mode: InteractionMode,
    /// Asymmetry of the underlying dense block before symmetrization; a
    /// round-off-sized value is expected, anything larger indicates a bug.
    pub hessian_asymmetry: f64,
}

const NORM_EPS: f64 = 1e-12;

pub fn interaction_matrix(
    op: &mut dyn CurvatureOperator,
    selection: &[(String, IndexSet)],
    mode: InteractionMode,
    guard: usize,
) -> Result<InteractionMatrix> {
    if selection.is_empty() {
        return Err(Error::InvalidConfig {
            field: "selection".into(),
            message: "interaction matrix needs at least one selection entry".into(),
        });
    }
    for (name, idx) in selection {
        if idx.is_empty() {
            return Err(Error::EmptyGroup { name: name.clone() });
        }
        idx.check_bounds(op.dim())?;
    }

    // The union construction rejects any index shared between selections.
    let mut all: Vec<usize> = Vec::new();
    for (_, idx) in selection {
        all.extend(idx.iter());
    }
    let union = IndexSet::new(all)?;
    if union.len() > guard {
        return Err(Error::DimGuard { dim: union.len(), guard });
    }

    let mut restricted = Restricted::new(op, &union)?;
    let (h, hessian_asymmetry) = dense_hessian(&mut restricted, guard)?;

    let pos = |i: usize| -> usize {
        union
            .as_slice()
            .binary_search(&i)
            .expect("selection indices are in the union")
    };
    let k = selection.len();
    let mut raw = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (_, a) = &selection[i];
            let (_, b) = &selection[j];
            let mut best = 0.0f64;
            let mut best_abs = -1.0f64;
            for ia in a.iter() {
                let ra = pos(ia);
                for ib in b.iter() {
                    let v = h.get(ra, pos(ib));
                    if v.abs() > best_abs {
                        best_abs = v.abs();
                        best = v;
                    }
                }
            }
            // Scanning only i ≤ j and mirroring keeps ties symmetric.
            raw[i][j] = best;
            raw[j][i] = best;
        }
    }

    let mut normalized = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let denom = (raw[i][i].abs() * raw[j][j].abs() + NORM_EPS).sqrt();
            normalized[i][j] = Some((raw[i][j] / denom).clamp(-1.0, 1.0));
        }
    }

    Ok(InteractionMatrix {
        labels: selection.iter().map(|(n, _)| n.clone()).collect(),
        sizes: selection.iter().map(|(_, s)| s.len()).collect(),
        raw,
        normalized,
        mode,
        hessian_asymmetry,
    })
}
