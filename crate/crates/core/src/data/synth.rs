//! Synthetic multi-modal tabular data.
//!
//! Normals come from `k_true` equally weighted isotropic Gaussians. In `dim`
//! dimensions such a Gaussian concentrates on a shell of radius
//! `sqrt(dim)` standard deviations, so every distance below is expressed in
//! units of that shell radius.
//! Two anomaly generators are available so that one kind can be labeled in
//! training while the other only appears at test time.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Truth};
use crate::error::{Error, Result};

/// Minimum distance between cluster means, in shell radii.
pub const MIN_MEAN_SEPARATION: f64 = 4.0;
/// Distance of the shifted cluster from its anchor mean, in shell radii.
const SHIFT_DISTANCE: f64 = 2.0;
const SHIFTED_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Uniform over the padded bounding box, rejected when closer to any
    /// cluster mean than the farthest normal is to its own mean.
    UniformFar,
    /// A tight Gaussian displaced from one of the normal clusters.
    ShiftedCluster,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::UniformFar => "uniform_far",
            AnomalyKind::ShiftedCluster => "shifted_cluster",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_far" => Ok(AnomalyKind::UniformFar),
            "shifted_cluster" => Ok(AnomalyKind::ShiftedCluster),
            other => Err(Error::InvalidConfig(format!(
                "unknown anomaly kind '{other}' (expected uniform_far or shifted_cluster)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub dim: usize,
    pub k_true: usize,
    pub anomaly_kind: AnomalyKind,
    pub seed: u64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gaussian_point<R: Rng + ?Sized>(center: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .map(|&c| {
            let n: f64 = StandardNormal.sample(rng);
            c + sd * n
        })
        .collect::<Vec<f64>>()
}

/// A fixed mixture from which normals and both anomaly kinds are drawn.
#[derive(Debug, Clone)]
pub struct MixtureGenerator {
    dim: usize,
    sigma: f64,
    means: Vec<Vec<f64>>,
    shifted_center: Vec<f64>,
    rng: ChaCha8Rng,
    /// Largest distance of any generated normal to its own mean.
    normal_radius: f64,
}

impl MixtureGenerator {
    pub fn new(dim: usize, k_true: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig("synthetic data needs dim >= 2".into()));
        }
        if k_true == 0 {
            return Err(Error::InvalidConfig("synthetic data needs k_true >= 1".into()));
        }
        let sigma = 1.0;
        let shell = sigma * (dim as f64).sqrt();
        let sep = MIN_MEAN_SEPARATION * shell;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut half_width = sep;
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(k_true);
        let mut attempts = 0usize;
        while means.len() < k_true {
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect();
            if means.iter().all(|m| dist(m, &cand) >= sep) {
                means.push(cand);
            } else {
                attempts += 1;
                if attempts.is_multiple_of(1000) {
                    half_width *= 1.5;
                }
            }
        }

        // Place the shifted cluster next to a random normal cluster, but not
        // closer to any other mean.
        let anchor = rng.random_range(0..k_true);
        let shifted_center = loop {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            let c: Vec<f64> = means[anchor]
                .iter()
                .zip(&dir)
                .map(|(m, d)| m + SHIFT_DISTANCE * shell * d / norm)
                .collect();
            if means.iter().all(|m| dist(m, &c) >= SHIFT_DISTANCE * shell - 1e-9) {
                break c;
            }
        };

        Ok(Self {
            dim,
            sigma,
            means,
            shifted_center,
            rng,
            normal_radius: 0.0,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Equal numbers per cluster (round-robin), each `N(mean, sigma^2 I)`.
    pub fn normals(&mut self, n: usize) -> Vec<Vec<f64>> {
        let k = self.means.len();
        (0..n)
            .map(|i| {
                let p = gaussian_point(&self.means[i % k], self.sigma, &mut self.rng);
                self.normal_radius = self.normal_radius.max(dist(&p, &self.means[i % k]));
                p
            })
            .collect()
    }

    pub fn anomalies(&mut self, kind: AnomalyKind, n: usize) -> Vec<Vec<f64>> {
        match kind {
            AnomalyKind::UniformFar => {
                // Until normals exist use the 3-sigma-per-axis ball as the radius.
                let radius = if self.normal_radius > 0.0 {
                    self.normal_radius
                } else {
                    3.0 * self.sigma * (self.dim as f64).sqrt()
                };
                let lo: Vec<f64> = (0..self.dim)
                    .map(|d| self.means.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min) - radius)
                    .collect();
                let hi: Vec<f64> = (0..self.dim)
                    .map(|d| self.means.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max) + radius)
                    .collect();
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let p: Vec<f64> = (0..self.dim)
                        .map(|d| self.rng.random_range(lo[d]..=hi[d]))
                        .collect();
                    if self.means.iter().all(|m| dist(m, &p) > radius) {
                        out.push(p);
                    }
                }
                out
            }
            AnomalyKind::ShiftedCluster => {
                let sd = SHIFTED_SPREAD * self.sigma;
                (0..n)
                    .map(|_| gaussian_point(&self.shifted_center, sd, &mut self.rng))
                    .collect()
            }
        }
    }

    /// Shuffles labelled rows into a dataset with ids in row order.
    pub fn assemble(&mut self, rows: Vec<(Vec<f64>, Truth)>) -> Dataset {
        let mut rows = rows;
        rows.shuffle(&mut self.rng);
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(id, (features, truth))| Sample::unlabeled(id, features, Some(truth)))
            .collect();
        Dataset {
            feature_names: Dataset::default_feature_names(self.dim),
            samples,
        }
    }
}

pub fn synth_multimodal(config: &SynthConfig) -> Result<Dataset> {
    if config.n_normal == 0 {
        return Err(Error::InvalidConfig("synthetic data needs at least one normal".into()));
    }
    let mut generator = MixtureGenerator::new(config.dim, config.k_true, config.seed)?;
    let mut rows: Vec<(Vec<f64>, Truth)> = generator
        .normals(config.n_normal)
        .into_iter()
        .map(|p| (p, Truth::Normal))
        .collect();
    rows.extend(
        generator
            .anomalies(config.anomaly_kind, config.n_anomaly)
            .into_iter()
            .map(|p| (p, Truth::Anomaly)),
    );
    Ok(generator.assemble(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k_true: usize, n_anomaly: usize, kind: AnomalyKind) -> SynthConfig {
        SynthConfig {
            n_normal: 300,
            n_anomaly,
            dim: 5,
            k_true,
            anomaly_kind: kind,
            seed: 17,
        }
    }

    #[test]
    fn single_blob_without_anomalies() {
        let d = synth_multimodal(&cfg(1, 0, AnomalyKind::UniformFar)).unwrap();
        assert_eq!(d.len(), 300);
        assert_eq!(d.n_anomalies(), 0);
        assert_eq!(d.dim(), 5);
    }

    #[test]
    fn means_are_separated() {
        let g = MixtureGenerator::new(10, 5, 3).unwrap();
        for (i, a) in g.means().iter().enumerate() {
            for b in &g.means()[i + 1..] {
                assert!(dist(a, b) >= MIN_MEAN_SEPARATION * 10f64.sqrt());
            }
        }
    }

    #[test]
    fn shifted_cluster_lies_beyond_the_normal_shell() {
        let mut g = MixtureGenerator::new(10, 3, 4).unwrap();
        let pts = g.anomalies(AnomalyKind::ShiftedCluster, 400);
        let centroid: Vec<f64> = (0..10).map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / 400.0).collect();
        let nearest = g.means().iter().map(|m| dist(m, &centroid)).fold(f64::INFINITY, f64::min);
        // Centroid of 400 draws with sd 0.5 is within ~0.1 of the true centre.
        assert!((nearest - 2.0 * 10f64.sqrt()).abs() < 0.2, "{nearest}");
    }

    #[test]
    fn uniform_far_anomalies_are_farther_than_any_normal() {
        let mut g = MixtureGenerator::new(10, 3, 8).unwrap();
        let normals = g.normals(900);
        let anomalies = g.anomalies(AnomalyKind::UniformFar, 50);
        let k = g.means().len();
        let worst_normal = normals
            .iter()
            .enumerate()
            .map(|(i, p)| dist(p, &g.means()[i % k]))
            .fold(0.0, f64::max);
        for a in &anomalies {
            let nearest = g.means().iter().map(|m| dist(m, a)).fold(f64::INFINITY, f64::min);
            assert!(nearest > worst_normal);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let c = cfg(3, 20, AnomalyKind::ShiftedCluster);
        assert_eq!(synth_multimodal(&c).unwrap(), synth_multimodal(&c).unwrap());
        let other = SynthConfig { seed: 18, ..c.clone() };
        assert_ne!(synth_multimodal(&c).unwrap(), synth_multimodal(&other).unwrap());
    }

    #[test]
    fn invalid_counts() {
        assert!(synth_multimodal(&SynthConfig { dim: 1, ..cfg(1, 0, AnomalyKind::UniformFar) }).is_err());
        assert!(synth_multimodal(&SynthConfig { k_true: 0, ..cfg(1, 0, AnomalyKind::UniformFar) }).is_err());
        assert!(synth_multimodal(&SynthConfig { n_normal: 0, ..cfg(1, 0, AnomalyKind::UniformFar) }).is_err());
    }

    #[test]
    fn kind_round_trips_through_text() {
        for k in [AnomalyKind::UniformFar, AnomalyKind::ShiftedCluster] {
            assert_eq!(k.to_string().parse::<AnomalyKind>().unwrap(), k);
        }
        assert!("nope".parse::<AnomalyKind>().is_err());
    }
}
