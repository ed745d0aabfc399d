//! Encoder/decoder and the asymmetric reconstruction losses.
//!
//! Unlabeled samples are pulled toward low reconstruction error in
//! proportion to their normality weight; labeled anomalies are pushed to
//! exceed the current unlabeled batch loss by at least a margin `m1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{HiddenActivation, Mlp, MlpSpec, OutputActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub e: f64,
}

impl Autoencoder {
    /// Encoder `D -> hidden -> H` (relu, identity head); decoder
    /// `H -> hidden -> D` (relu, sigmoid head).
    pub fn new<R: Rng + ?Sized>(dim: usize, latent: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let enc = MlpSpec::new(
            vec![dim, hidden, latent],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )?;
        let dec = MlpSpec::new(
            vec![latent, hidden, dim],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )?;
        Ok(Self {
            encoder: Mlp::new("encoder", enc, rng)?,
            decoder: Mlp::new("decoder", dec, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(z)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<ReconOutput> {
        let z = self.encode(x)?;
        let x_hat = self.decode(&z)?;
        let e = recon_error(x, &x_hat)?;
        Ok(ReconOutput { z, x_hat, e })
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }
}

/// Per-feature mean squared error.
pub fn recon_error(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::dim("reconstruction", x.len(), x_hat.len()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("zero-length sample".into()));
    }
    let sum: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// `d e / d x_hat`.
pub fn recon_error_grad(x: &[f64], x_hat: &[f64]) -> Vec<f64> {
    let scale = 2.0 / x.len() as f64;
    x.iter().zip(x_hat).map(|(a, b)| scale * (b - a)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconLossParts {
    pub loss_u: f64,
    pub loss_a: f64,
    /// The unlabeled loss as seen by the hinge (held constant there).
    pub batch_mean_u: f64,
}

/// Mean of `w_i * e_i` over the unlabeled batch.
pub fn loss_recon_unlabeled(errors: &[f64], weights: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("unlabeled batch".into()));
    }
    if errors.len() != weights.len() {
        return Err(Error::dim("unlabeled weights", errors.len(), weights.len()));
    }
    let s: f64 = errors.iter().zip(weights).map(|(e, w)| e * w).sum();
    Ok(s / errors.len() as f64)
}

/// Mean of `max(0, m1 - (e_i - batch_mean_u))` over the anomaly batch.
pub fn loss_recon_anomaly(errors: &[f64], batch_mean_u: f64, m1: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("anomaly batch".into()));
    }
    let s: f64 = errors
        .iter()
        .map(|e| (m1 - (e - batch_mean_u)).max(0.0))
        .sum();
    Ok(s / errors.len() as f64)
}

/// `d loss_a / d e_i`: `-1/|batch|` while the hinge is active, else 0.
pub fn loss_recon_anomaly_grad(errors: &[f64], batch_mean_u: f64, m1: f64) -> Vec<f64> {
    let g = -1.0 / errors.len() as f64;
    errors
        .iter()
        .map(|e| if m1 - (e - batch_mean_u) > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn loss_recon_total(parts: &ReconLossParts) -> f64 {
    parts.loss_u + parts.loss_a
}
