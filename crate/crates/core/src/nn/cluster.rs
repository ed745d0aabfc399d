//! k-means (k-means++ seeding + Lloyd iterations), silhouette scoring and
//! the silhouette-based choice of the number of clusters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 100;

/// Below this best silhouette the data is treated as a single mode.
pub const MIN_SILHOUETTE_FOR_SPLIT: f64 = 0.05;

/// Silhouette is quadratic in the number of points; larger inputs are
/// scored on a seeded subsample of this size.
pub const SILHOUETTE_SAMPLE_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::EmptyInput("no points to cluster".into()))?;
    let dim = first.len();
    for p in points {
        if p.len() != dim {
            return Err(Error::dim("point dimension", dim, p.len()));
        }
    }
    Ok(dim)
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // Every remaining point coincides with a centroid.
            let mut rest: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            rest.shuffle(rng);
            rest[0]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let dim = check_points(points)?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;

    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            inertia += d;
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            // An empty cluster keeps its previous centroid.
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
    }

    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &j)| sq_dist(p, &centroids[j]))
        .sum();
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia,
        inertia_history,
        iterations,
    })
}

/// Mean silhouette coefficient with Euclidean distances.
///
/// Conventions: a point alone in its cluster scores 0, and `0/0` (all
/// distances zero) scores 0.
pub fn silhouette_score(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64> {
    check_points(points)?;
    if assignment.len() != points.len() {
        return Err(Error::dim("silhouette assignment", points.len(), assignment.len()));
    }
    let n_clusters = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_clusters];
    for &a in assignment {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidConfig(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }

    let mut total = 0.0;
    let mut dist_sums = vec![0.0; n_clusters];
    for (i, p) in points.iter().enumerate() {
        let own = assignment[i];
        if sizes[own] == 1 {
            continue;
        }
        dist_sums.fill(0.0);
        for (j, q) in points.iter().enumerate() {
            if i != j {
                dist_sums[assignment[j]] += sq_dist(p, q).sqrt();
            }
        }
        let a = dist_sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| dist_sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    pub inertia: f64,
    /// Absent for `k = 1`.
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub candidates: Vec<KCandidate>,
    pub chosen: usize,
}

/// Runs k-means for every `k` in `1..=k_max` and keeps the silhouette
/// maximiser among `k >= 2`, falling back to `k = 1` when even the best
/// silhouette is below [`MIN_SILHOUETTE_FOR_SPLIT`].
pub fn select_k(points: &[Vec<f64>], k_max: usize, seed: u64) -> Result<KSelection> {
    check_points(points)?;
    if k_max == 0 {
        return Err(Error::InvalidConfig("k_max must be >= 1".into()));
    }
    let k_max = k_max.min(points.len());

    let sample: Vec<usize> = if points.len() > SILHOUETTE_SAMPLE_CAP {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5111_0e77));
        idx.truncate(SILHOUETTE_SAMPLE_CAP);
        idx.sort_unstable();
        idx
    } else {
        (0..points.len()).collect()
    };
    let sample_points: Vec<Vec<f64>> = sample.iter().map(|&i| points[i].clone()).collect();

    let mut candidates = Vec::with_capacity(k_max);
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=k_max {
        let fit = kmeans(points, k, seed)?;
        let silhouette = if k >= 2 {
            let labels: Vec<usize> = sample.iter().map(|&i| fit.assignment[i]).collect();
            // A subsample (or k-means itself) may leave fewer than two
            // occupied clusters; such a k cannot win.
            let s = silhouette_score(&sample_points, &labels).ok();
            if let Some(s) = s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((k, s));
                }
            }
            s
        } else {
            None
        };
        candidates.push(KCandidate {
            k,
            inertia: fit.inertia,
            silhouette,
        });
    }
    let chosen = match best {
        Some((k, s)) if s >= MIN_SILHOUETTE_FOR_SPLIT => k,
        _ => 1,
    };
    Ok(KSelection { candidates, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[[f64; 2]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn single_cluster_is_mean() {
        let p = pts(&[[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]]);
        let r = kmeans(&p, 1, 7).unwrap();
        assert!((r.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-12);
        assert!(r.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_separated_pairs() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]]);
        // Exhaustive check: of the 7 two-way partitions of 4 points, the
        // pair split has by far the lowest within-cluster scatter.
        let best_partition_inertia = 2.0 * (2.0 * 0.05f64.powi(2));
        for seed in 0..10 {
            let r = kmeans(&p, 2, seed).unwrap();
            let mut c = r.centroids.clone();
            c.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
            assert!((c[0][0] - 0.05).abs() < 1e-12 && c[0][1] == 0.0);
            assert!((c[1][0] - 10.05).abs() < 1e-12 && c[1][1] == 0.0);
            assert!((r.inertia - best_partition_inertia).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let p = pts(&[[0.0, 0.0], [1.0, 5.0], [3.0, 2.0], [-1.0, 0.5]]);
        let r = kmeans(&p, 4, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignment.clone();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn duplicate_points_with_k_equal_n() {
        let p = pts(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let r = kmeans(&p, 3, 0).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn kmeans_errors() {
        assert!(kmeans(&[], 1, 0).is_err());
        assert!(kmeans(&pts(&[[0.0, 0.0]]), 2, 0).is_err());
        assert!(kmeans(&pts(&[[0.0, 0.0]]), 0, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let p: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 5) as f64]).collect();
        assert_eq!(kmeans(&p, 4, 11).unwrap(), kmeans(&p, 4, 11).unwrap());
    }

    #[test]
    fn tight_far_clusters_score_high() {
        // Hand check: a = 0.1 for every point; b is 10.05 for the outer
        // points and 9.95 for the inner ones.
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]]);
        let s = silhouette_score(&p, &[0, 0, 1, 1]).unwrap();
        let expected = ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!(s > 0.9);
    }

    #[test]
    fn identical_points_score_zero() {
        let p = pts(&[[1.0, 1.0]; 4]);
        assert_eq!(silhouette_score(&p, &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_points_score_low() {
        // Line 0,1,2,3 labelled A,B,A,B: per-point scores 0, -1/2, -1/2, 0.
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let s = silhouette_score(&p, &[0, 1, 0, 1]).unwrap();
        assert!((s + 0.25).abs() < 1e-12);
        assert!(s < 0.2);
    }

    #[test]
    fn single_cluster_silhouette_is_error() {
        let p = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(silhouette_score(&p, &[0, 0]).is_err());
    }

    #[test]
    fn select_k_finds_three_blobs() {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut p = Vec::new();
        for (i, c) in centers.iter().enumerate() {
            for j in 0..20 {
                let t = (i * 20 + j) as f64;
                p.push(vec![c[0] + 0.3 * (t * 1.7).sin(), c[1] + 0.3 * (t * 2.3).cos()]);
            }
        }
        let sel = select_k(&p, 10, 5).unwrap();
        assert_eq!(sel.chosen, 3);
        assert_eq!(sel.candidates.len(), 10);
        assert!(sel.candidates[0].silhouette.is_none());
    }

    #[test]
    fn select_k_with_k_max_one() {
        let p = pts(&[[0.0, 0.0], [5.0, 5.0]]);
        assert_eq!(select_k(&p, 1, 0).unwrap().chosen, 1);
    }
}
