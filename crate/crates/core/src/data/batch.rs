use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Indices into the unlabeled and labeled-anomaly pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub unlabeled: Vec<usize>,
    pub anomalies: Vec<usize>,
}

fn draw<R: Rng + ?Sized>(pool: usize, amount: usize, rng: &mut R) -> Vec<usize> {
    if pool >= amount {
        index::sample(rng, pool, amount).into_vec()
    } else {
        (0..amount).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Uniform mini-batch of `b_u` unlabeled samples and `b_a` labeled anomalies;
/// a pool smaller than its request is sampled with replacement.
pub fn sample_batch<T, R: Rng + ?Sized>(
    unlabeled: &[T],
    anomalies: &[T],
    b_u: usize,
    b_a: usize,
    rng: &mut R,
) -> Result<Batch> {
    if anomalies.is_empty() {
        return Err(Error::NoLabeledAnomalies);
    }
    if unlabeled.is_empty() {
        return Err(Error::EmptyInput("unlabeled pool is empty".into()));
    }
    if b_u == 0 || b_a == 0 {
        return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
    }
    Ok(Batch {
        unlabeled: draw(unlabeled.len(), b_u, rng),
        anomalies: draw(anomalies.len(), b_a, rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn requested_sizes() {
        let u = vec![0u8; 1000];
        let a = vec![0u8; 50];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&u, &a, 128, 32, &mut rng).unwrap();
        assert_eq!(b.unlabeled.len(), 128);
        assert_eq!(b.anomalies.len(), 32);
        let mut uniq = b.unlabeled.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 128, "large pools are drawn without replacement");
    }

    #[test]
    fn small_pool_with_replacement() {
        let u = vec![0u8; 10];
        let a = vec![0u8; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_batch(&u, &a, 4, 32, &mut rng).unwrap();
        assert_eq!(b.anomalies.len(), 32);
        assert!(b.anomalies.iter().all(|&i| i < 3));
    }

    #[test]
    fn seeded_repeat() {
        let u = vec![0u8; 100];
        let a = vec![0u8; 7];
        let b1 = sample_batch(&u, &a, 16, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b2 = sample_batch(&u, &a, 16, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn empty_anomaly_pool() {
        let u = vec![0u8; 10];
        let err = sample_batch::<u8, _>(&u, &[], 4, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("at least one labeled anomaly"));
    }
}
