//! Unified anomaly scorer over `(e, z, s)` and its weighted loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{HiddenActivation, Mlp, MlpSpec, OutputActivation, Tape};

/// Scorer features in their fixed order: reconstruction error, raw latent,
/// maximum prototype similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInput {
    pub e: f64,
    pub z: Vec<f64>,
    pub s: f64,
}

impl ScoreInput {
    pub fn to_features(&self, include_error: bool) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.z.len() + 2);
        if include_error {
            v.push(self.e);
        }
        v.extend_from_slice(&self.z);
        v.push(self.s);
        v
    }
}

/// Gradient of the score w.r.t. each input part.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInputGrad {
    pub e: f64,
    pub z: Vec<f64>,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub net: Mlp,
    /// False for the decoder-free ablation, where `e` is not an input.
    pub include_error: bool,
    /// Fixed affine map `(feature - shift) * scale` applied before the
    /// network. Identity until [`Scorer::standardize_inputs`] is called.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Features whose spread is below this are only centred.
const MIN_INPUT_SD: f64 = 1e-8;

impl Scorer {
    /// `(H + 2) -> hidden -> 1`, relu hidden, sigmoid head.
    pub fn new<R: Rng + ?Sized>(latent: usize, hidden: usize, include_error: bool, rng: &mut R) -> Result<Self> {
        let input = latent + 1 + usize::from(include_error);
        let spec = MlpSpec::new(
            vec![input, hidden, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )?;
        Ok(Self {
            net: Mlp::new("scorer", spec, rng)?,
            include_error,
            input_shift: vec![0.0; input],
            input_scale: vec![1.0; input],
        })
    }

    /// Sets the input map to per-feature standardization over `inputs`.
    pub fn standardize_inputs(&mut self, inputs: &[ScoreInput]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("no scorer inputs to standardize".into()));
        }
        let rows: Vec<Vec<f64>> = inputs.iter().map(|i| i.to_features(self.include_error)).collect();
        let width = self.net.input_dim();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::dim("scorer input", width, r.len()));
        }
        let n = rows.len() as f64;
        for d in 0..width {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean) * (r[d] - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            self.input_shift[d] = mean;
            self.input_scale[d] = if sd > MIN_INPUT_SD { 1.0 / sd } else { 1.0 };
        }
        Ok(())
    }

    fn features(&self, input: &ScoreInput) -> Vec<f64> {
        let mut f = input.to_features(self.include_error);
        for ((v, m), s) in f.iter_mut().zip(&self.input_shift).zip(&self.input_scale) {
            *v = (*v - m) * s;
        }
        f
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim() - 1 - usize::from(self.include_error)
    }

    pub fn forward(&self, input: &ScoreInput) -> Result<(f64, Tape)> {
        if input.z.len() != self.latent_dim() {
            return Err(Error::dim("scorer latent", self.latent_dim(), input.z.len()));
        }
        let (y, tape) = self.net.forward(&self.features(input))?;
        Ok((y[0], tape))
    }

    pub fn score(&self, input: &ScoreInput) -> Result<f64> {
        self.forward(input).map(|(s, _)| s)
    }

    /// Accumulates parameter gradients for `upstream = dL/dscore`.
    pub fn backward(&mut self, tape: &Tape, upstream: f64) -> Result<ScoreInputGrad> {
        let mut g = self.net.backward(tape, &[upstream])?;
        for (v, s) in g.iter_mut().zip(&self.input_scale) {
            *v *= s;
        }
        let offset = usize::from(self.include_error);
        let h = self.latent_dim();
        Ok(ScoreInputGrad {
            e: if self.include_error { g[0] } else { 0.0 },
            z: g[offset..offset + h].to_vec(),
            s: g[offset + h],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreLossKind {
    #[default]
    SquaredError,
    BinaryCrossEntropy,
}

const BCE_CLAMP: f64 = 1e-12;

impl ScoreLossKind {
    fn value(self, score: f64, target: f64) -> f64 {
        match self {
            ScoreLossKind::SquaredError => (score - target).powi(2),
            ScoreLossKind::BinaryCrossEntropy => {
                let p = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
            }
        }
    }

    fn grad(self, score: f64, target: f64) -> f64 {
        match self {
            ScoreLossKind::SquaredError => 2.0 * (score - target),
            ScoreLossKind::BinaryCrossEntropy => {
                let p = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -target / p + (1.0 - target) / (1.0 - p)
            }
        }
    }
}

fn check(unl: &[f64], w: &[f64], anom: &[f64]) -> Result<()> {
    if unl.is_empty() || anom.is_empty() {
        return Err(Error::EmptyInput("score loss needs both batches".into()));
    }
    if unl.len() != w.len() {
        return Err(Error::dim("score loss weights", unl.len(), w.len()));
    }
    Ok(())
}

/// `mean_u[w_i l(score_i, 0)] + mean_a[l(score_i, 1)]`.
pub fn score_loss(unl_scores: &[f64], unl_w: &[f64], anom_scores: &[f64], kind: ScoreLossKind) -> Result<f64> {
    check(unl_scores, unl_w, anom_scores)?;
    let u: f64 = unl_scores
        .iter()
        .zip(unl_w)
        .map(|(s, w)| w * kind.value(*s, 0.0))
        .sum::<f64>()
        / unl_scores.len() as f64;
    let a: f64 = anom_scores.iter().map(|s| kind.value(*s, 1.0)).sum::<f64>() / anom_scores.len() as f64;
    Ok(u + a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLossGrads {
    pub unl_scores: Vec<f64>,
    pub unl_w: Vec<f64>,
    pub anom_scores: Vec<f64>,
}

pub fn score_loss_grads(
    unl_scores: &[f64],
    unl_w: &[f64],
    anom_scores: &[f64],
    kind: ScoreLossKind,
) -> Result<ScoreLossGrads> {
    check(unl_scores, unl_w, anom_scores)?;
    let nu = unl_scores.len() as f64;
    let na = anom_scores.len() as f64;
    Ok(ScoreLossGrads {
        unl_scores: unl_scores
            .iter()
            .zip(unl_w)
            .map(|(s, w)| w * kind.grad(*s, 0.0) / nu)
            .collect(),
        unl_w: unl_scores.iter().map(|s| kind.value(*s, 0.0) / nu).collect(),
        anom_scores: anom_scores.iter().map(|s| kind.grad(*s, 1.0) / na).collect(),
    })
}
