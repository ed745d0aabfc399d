//! Shared test helpers: a tiny random model and a central-difference
//! gradient oracle that is independent of the analytic backward pass.

#![allow(dead_code)]

use protoad::model::{Detached, Model, ObjectiveSettings, TermCoefficients};
use protoad::PrototypeBank;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct TinyProblem {
    pub model: Model,
    pub unlabeled: Vec<Vec<f64>>,
    pub anomalies: Vec<Vec<f64>>,
}

/// D=4, H=2, k=2, batch 3 unlabeled + 2 anomalies, random everything.
pub fn tiny_problem(seed: u64, use_decoder: bool) -> TinyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let bank = PrototypeBank::new(&protos, 1.0, 1.0).unwrap();
    let mut model = Model::new(4, 2, 6, 5, bank, use_decoder, &mut rng).unwrap();
    // Non-zero biases so that every bias gradient is exercised.
    for p in model.params_mut() {
        if p.name().contains(".b") {
            for v in p.values_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let width = model.scorer.input_shift.len();
    model.scorer.input_shift = (0..width).map(|_| rng.random_range(-0.5..0.5)).collect();
    model.scorer.input_scale = (0..width).map(|_| rng.random_range(0.5..3.0)).collect();
    let sample = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
    let unlabeled = (0..3).map(|_| sample(&mut rng)).collect();
    let anomalies = (0..2).map(|_| sample(&mut rng)).collect();
    TinyProblem { model, unlabeled, anomalies }
}

fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

fn surrogate(p: &TinyProblem, model: &Model, s: &ObjectiveSettings, c: &TermCoefficients, frozen: &Detached) -> f64 {
    model
        .evaluate(&refs(&p.unlabeled), &refs(&p.anomalies), s, Some(frozen))
        .unwrap()
        .terms
        .combined(c)
}

#[derive(Debug)]
pub struct TensorError {
    pub name: String,
    pub rel_err: f64,
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|, 1e-6)` between the
/// analytic gradient and central differences with step `h`.
pub fn gradient_errors(
    p: &TinyProblem,
    s: &ObjectiveSettings,
    c: &TermCoefficients,
    h: f64,
) -> Vec<TensorError> {
    let mut model = p.model.clone();
    let eval = model
        .evaluate(&refs(&p.unlabeled), &refs(&p.anomalies), s, None)
        .unwrap();
    model.zero_grad();
    model.backward(&eval, s, c).unwrap();
    let frozen = eval.detached.clone();

    let n_tensors = model.params().len();
    let mut out = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let analytic = model.params()[t].grad().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = p.model.clone();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let base = probe.params()[t].values()[i];
            probe.params_mut()[t].values_mut()[i] = base + h;
            let up = surrogate(p, &probe, s, c, &frozen);
            probe.params_mut()[t].values_mut()[i] = base - h;
            let down = surrogate(p, &probe, s, c, &frozen);
            probe.params_mut()[t].values_mut()[i] = base;
            *slot = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let denom = norm(&analytic).max(norm(&numeric)).max(1e-6);
        out.push(TensorError {
            name: model.params()[t].name().to_string(),
            rel_err: norm(&diff) / denom,
        });
    }
    out
}

pub fn max_error(errors: &[TensorError]) -> f64 {
    errors.iter().map(|e| e.rel_err).fold(0.0, f64::max)
}
