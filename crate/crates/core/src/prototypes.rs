//! Multi-normal prototype bank and its losses.
//!
//! Similarities use a Student-t kernel between L2-normalized latents and
//! L2-normalized prototypes:
//!
//! `s_ij = (1 + |ẑ_i - û_j|² / α)^(-(α+1)/2)`
//!
//! The bank stores raw (unnormalized) prototypes so gradients flow through
//! the normalization. Unlabeled samples get a normality weight
//! `w_i = σ(β · max_j s_ij)`. The prototype loss is a DEC-style KL term on
//! unlabeled soft assignments plus a contrastive term separating unlabeled
//! and anomalous maximum similarities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kmeans, select_k, sigmoid, KSelection, Mlp, ParamTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    /// Silhouette sweep over `1..=k_max`.
    Auto,
    Fixed(usize),
}

impl std::fmt::Display for KChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KChoice::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KChoice::Fixed(k)),
            _ => Err(Error::InvalidConfig(format!("k must be 'auto' or a positive integer, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `k × H`, unnormalized.
    pub u: ParamTensor,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub s: Vec<f64>,
    pub s_max: f64,
    pub argmax: usize,
}

impl SimilarityRow {
    fn from_sims(s: Vec<f64>) -> Self {
        let (argmax, s_max) = s
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best });
        Self { s, s_max, argmax }
    }
}

/// Returns the unit vector and the original norm.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroNorm(format!("norm = {norm}")));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// Pulls a gradient w.r.t. the unit vector back to the raw vector:
/// `(g - û (û·g)) / |v|`.
pub fn l2_normalize_backward(unit: &[f64], norm: f64, grad_unit: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
    unit.iter()
        .zip(grad_unit)
        .map(|(u, g)| (g - u * dot) / norm)
        .collect()
}

pub fn student_t_similarity(d2: f64, alpha: f64) -> f64 {
    (1.0 + d2 / alpha).powf(-(alpha + 1.0) / 2.0)
}

/// `d s / d (d²)`.
pub fn student_t_similarity_grad(d2: f64, alpha: f64) -> f64 {
    let base = 1.0 + d2 / alpha;
    -(alpha + 1.0) / (2.0 * alpha) * base.powf(-(alpha + 1.0) / 2.0 - 1.0)
}

pub fn normality_weight(s_max: f64, beta: f64) -> f64 {
    sigmoid(beta * s_max)
}

impl PrototypeBank {
    pub fn new(prototypes: &[Vec<f64>], alpha: f64, beta: f64) -> Result<Self> {
        let k = prototypes.len();
        if k == 0 {
            return Err(Error::InvalidConfig("a prototype bank needs k >= 1".into()));
        }
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must be positive (alpha = {alpha}, beta = {beta})"
            )));
        }
        let h = prototypes[0].len();
        let mut values = Vec::with_capacity(k * h);
        for p in prototypes {
            if p.len() != h {
                return Err(Error::dim("prototype dimension", h, p.len()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("prototype has non-finite entries".into()));
            }
            values.extend_from_slice(p);
        }
        Ok(Self {
            u: ParamTensor::from_values("prototypes", Shape::Matrix(k, h), values),
            alpha,
            beta,
        })
    }

    pub fn k(&self) -> usize {
        self.u.shape().dims().0
    }

    pub fn latent_dim(&self) -> usize {
        self.u.shape().dims().1
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let h = self.latent_dim();
        &self.u.values()[j * h..(j + 1) * h]
    }

    /// Unit prototypes with their original norms.
    pub fn normalized(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        (0..self.k()).map(|j| l2_normalize(self.row(j))).collect()
    }

    /// Similarities of one already-normalized latent to pre-normalized prototypes.
    pub fn similarity_unit(&self, z_unit: &[f64], units: &[(Vec<f64>, f64)]) -> SimilarityRow {
        let s = units
            .iter()
            .map(|(u, _)| {
                let d2: f64 = z_unit.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
                student_t_similarity(d2, self.alpha)
            })
            .collect();
        SimilarityRow::from_sims(s)
    }

    pub fn similarity(&self, z: &[f64]) -> Result<SimilarityRow> {
        if z.len() != self.latent_dim() {
            return Err(Error::dim("similarity latent", self.latent_dim(), z.len()));
        }
        let (z_unit, _) = l2_normalize(z)?;
        Ok(self.similarity_unit(&z_unit, &self.normalized()?))
    }
}

/// `q_ij = s_ij / Σ_j' s_ij'`.
pub fn soft_assignments(sims: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sims.iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(|s| s / total).collect()
        })
        .collect()
}

/// Sharpened target `p_ij ∝ q_ij² / f_j`, with `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = q.first().map_or(0, Vec::len);
    let mut f = vec![0.0; k];
    for row in q {
        f.iter_mut().zip(row).for_each(|(fj, v)| *fj += v);
    }
    q.iter()
        .map(|row| {
            let raw: Vec<f64> = row.iter().zip(&f).map(|(v, fj)| v * v / fj).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|r| r / total).collect()
        })
        .collect()
}

/// `Σ_i Σ_j p_ij ln(p_ij / q_ij)`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    p.iter()
        .zip(q)
        .flat_map(|(pr, qr)| pr.iter().zip(qr))
        .map(|(&pv, &qv)| if pv > 0.0 { pv * (pv / qv).ln() } else { 0.0 })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlOutput {
    pub loss: f64,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

/// Clustering loss over unlabeled similarity rows. The returned `p` is the
/// constant target; gradients only flow through `q`.
pub fn kl_clustering_loss(sims: &[Vec<f64>]) -> KlOutput {
    let q = soft_assignments(sims);
    let p = target_distribution(&q);
    KlOutput {
        loss: kl_divergence(&p, &q),
        q,
        p,
    }
}

/// `d L_kl / d s_il = (1 - p_il / q_il) / Σ_j s_ij` for a fixed target row.
pub fn kl_grad_wrt_similarity(s_row: &[f64], p_row: &[f64]) -> Vec<f64> {
    let total: f64 = s_row.iter().sum();
    s_row
        .iter()
        .zip(p_row)
        .map(|(s, p)| (1.0 - p / (s / total)) / total)
        .collect()
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// `softplus(-a)` written to stay finite for large `|a|`.
fn neg_log_sigmoid(a: f64) -> f64 {
    if a > 0.0 {
        (-a).exp().ln_1p()
    } else {
        -a + a.exp().ln_1p()
    }
}

fn contrastive_gap(unl_smax: &[f64], unl_w: &[f64], anom_smax: &[f64]) -> Result<f64> {
    if unl_smax.is_empty() || anom_smax.is_empty() {
        return Err(Error::EmptyInput("contrastive loss needs both batches".into()));
    }
    if unl_smax.len() != unl_w.len() {
        return Err(Error::dim("contrastive weights", unl_smax.len(), unl_w.len()));
    }
    let pos = mean(unl_smax.iter().zip(unl_w).map(|(s, w)| s * w), unl_smax.len());
    let neg = mean(anom_smax.iter().copied(), anom_smax.len());
    Ok(pos - neg)
}

/// `-ln σ(mean_u[w_i s_i] - mean_a[s_i])`.
pub fn contrastive_loss(unl_smax: &[f64], unl_w: &[f64], anom_smax: &[f64]) -> Result<f64> {
    Ok(neg_log_sigmoid(contrastive_gap(unl_smax, unl_w, anom_smax)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrads {
    pub unl_smax: Vec<f64>,
    pub unl_w: Vec<f64>,
    pub anom_smax: Vec<f64>,
}

pub fn contrastive_grads(unl_smax: &[f64], unl_w: &[f64], anom_smax: &[f64]) -> Result<ContrastiveGrads> {
    let gap = contrastive_gap(unl_smax, unl_w, anom_smax)?;
    let d_gap = sigmoid(gap) - 1.0;
    let nu = unl_smax.len() as f64;
    let na = anom_smax.len() as f64;
    Ok(ContrastiveGrads {
        unl_smax: unl_w.iter().map(|w| d_gap * w / nu).collect(),
        unl_w: unl_smax.iter().map(|s| d_gap * s / nu).collect(),
        anom_smax: vec![-d_gap / na; anom_smax.len()],
    })
}

pub fn prototype_loss(kl: f64, con: f64) -> f64 {
    con + kl
}

/// Seeds the bank with k-means centroids of the L2-normalized encoder
/// outputs of `unlabeled`. The centroids are arithmetic means of unit
/// vectors and are not re-projected onto the sphere.
pub fn init_prototypes(
    encoder: &Mlp,
    unlabeled: &[Vec<f64>],
    k: KChoice,
    k_max: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<(PrototypeBank, Option<KSelection>)> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyInput("no unlabeled samples for prototype init".into()));
    }
    let latents: Vec<Vec<f64>> = unlabeled
        .iter()
        .map(|x| encoder.predict(x).and_then(|z| l2_normalize(&z).map(|(u, _)| u)))
        .collect::<Result<_>>()?;
    let (k, selection) = match k {
        KChoice::Fixed(k) => {
            if k > latents.len() {
                return Err(Error::InvalidConfig(format!(
                    "k = {k} exceeds the number of unlabeled samples ({})",
                    latents.len()
                )));
            }
            (k, None)
        }
        KChoice::Auto => {
            let sel = select_k(&latents, k_max, seed)?;
            (sel.chosen, Some(sel))
        }
    };
    let fit = kmeans(&latents, k, seed)?;
    Ok((PrototypeBank::new(&fit.centroids, alpha, beta)?, selection))
}
