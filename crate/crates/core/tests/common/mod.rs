//! Shared oracles for the acceptance suite: finite-difference derivatives,
//! an independent Jacobi eigensolver, and small seeded model fixtures.
//!
//! Everything here is deliberately written from first principles rather than
//! through the library's own numerics, so agreement is evidence, not
//! tautology.

use hessdiag::linalg::{DenseMatrix, FlatVector};
use hessdiag::models::{generate, make_batch, Batch, DataSpec, Model, ModelConfig, ModelKind};

/// Desk-scale config for each architecture: big enough to exercise every
/// group, small enough that full-coordinate finite differences are cheap.
pub fn small_config(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::with_kind(kind);
    cfg.embed_dim = 4;
    match kind {
        ModelKind::Hierarchical => {
            cfg.sents_per_doc = 2;
            cfg.words_per_sent = 3;
        }
        ModelKind::Selfattn | ModelKind::Crossattn => {
            cfg.seq_len = 4;
            cfg.heads = 2;
        }
        ModelKind::Quadratic => {}
    }
    cfg
}

/// A freshly initialized model and a generated batch, both fixed by `seed`.
pub fn seeded_fixture(kind: ModelKind, examples: usize, seed: u64) -> (Model, Batch) {
    let mut cfg = small_config(kind);
    cfg.init_seed = seed;
    let splits = generate(
        &cfg,
        &DataSpec { train_examples: examples, test_examples: 0, seed },
    )
    .unwrap();
    let batch = make_batch(&cfg, &splits.train.examples).unwrap();
    (Model::build(cfg).unwrap(), batch)
}

/// Loss at explicit parameters, through a throwaway model.
pub fn loss_at(model: &Model, params: FlatVector, batch: &Batch) -> f64 {
    let mut probe = Model::from_parts(model.config().clone(), params).unwrap();
    probe.loss(batch).unwrap()
}

/// Gradient at explicit parameters, through a throwaway model.
pub fn grad_at(model: &Model, params: FlatVector, batch: &Batch) -> FlatVector {
    let mut probe = Model::from_parts(model.config().clone(), params).unwrap();
    probe.loss_and_gradient(batch).unwrap().1
}

/// Central-difference gradient over every coordinate.
pub fn fd_gradient(model: &Model, batch: &Batch, h: f64) -> Vec<f64> {
    let n = model.param_count();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = model.params.clone();
        plus.0[i] += h;
        let mut minus = model.params.clone();
        minus.0[i] -= h;
        out.push((loss_at(model, plus, batch) - loss_at(model, minus, batch)) / (2.0 * h));
    }
    out
}

/// Central finite difference of gradients along `v`: ≈ H·v.
pub fn fd_hvp(model: &Model, batch: &Batch, v: &FlatVector, h: f64) -> Vec<f64> {
    let mut plus = model.params.clone();
    plus.axpy(h, v);
    let mut minus = model.params.clone();
    minus.axpy(-h, v);
    let gp = grad_at(model, plus, batch);
    let gm = grad_at(model, minus, batch);
    gp.0.iter().zip(&gm.0).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

/// Largest componentwise relative error, with `floor` guarding the
/// denominator against components that are themselves near zero.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Deterministic dense direction vector; different `k` give directions with
/// no shared structure.
pub fn wave(n: usize, k: usize) -> FlatVector {
    FlatVector((0..n).map(|i| (((i * 37 + k * 17 + 5) % 101) as f64) / 101.0 - 0.5).collect())
}

/// Cyclic Jacobi rotation eigensolver, the acceptance suite's dense oracle.
/// A different algorithm family from the library's tridiagonal QL solver.
pub fn jacobi_spectrum(m: &DenseMatrix) -> Vec<f64> {
    assert_eq!(m.rows, m.cols, "square input");
    let n = m.rows;
    let mut a = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            a[r * n + c] = 0.5 * (m.get(r, c) + m.get(c, r));
        }
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| a[r * n + c] * a[r * n + c])
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}
