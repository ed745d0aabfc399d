use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Truth, WeakLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of the training anomalies that receive a label.
    pub labeled_anomaly_ratio: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// When set, unlabeled training anomalies are subsampled so that they
    /// make up this fraction of the unlabeled pool. Surplus anomalies are
    /// discarded.
    pub target_contamination: Option<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            labeled_anomaly_ratio: 0.01,
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
            target_contamination: None,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.labeled_anomaly_ratio) {
            return Err(Error::InvalidConfig(format!(
                "labeled anomaly ratio {} is outside [0, 1]",
                self.labeled_anomaly_ratio
            )));
        }
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.val_fraction)
            || !frac_ok(self.test_fraction)
            || self.val_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "val/test fractions ({}, {}) must lie in [0, 1) and sum to less than 1",
                self.val_fraction, self.test_fraction
            )));
        }
        if let Some(c) = self.target_contamination {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::InvalidConfig(format!(
                    "target contamination {c} is outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Number of labeled anomalies for a pool of `n` anomalies: the ratio
/// rounded up, never below one (when `n > 0`).
pub(crate) fn labeled_count(ratio: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // The small offset keeps products such as 0.05 * 40 from rounding up past 2.
    let raw = (ratio * n as f64 - 1e-9).ceil().max(1.0) as usize;
    raw.min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSplit {
    /// `X_U`: normals plus the unlabeled (hidden) anomalies.
    pub train_unlabeled: Vec<Sample>,
    /// `X_A`: labeled anomalies.
    pub train_anomalies: Vec<Sample>,
    /// Validation samples carry truth and weak labels built with the same ratio.
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl WeakSplit {
    pub fn contamination(&self) -> f64 {
        let hidden = self
            .train_unlabeled
            .iter()
            .filter(|s| s.truth == Some(Truth::Anomaly))
            .count();
        hidden as f64 / self.train_unlabeled.len().max(1) as f64
    }
}

fn weakly_label(mut anomalies: Vec<Sample>, ratio: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_lab = labeled_count(ratio, anomalies.len());
    let rest = anomalies.split_off(n_lab);
    for s in anomalies.iter_mut() {
        s.weak_label = WeakLabel::LabeledAnomaly;
    }
    (anomalies, rest)
}

/// Builds `X_U`, `X_A`, validation and test sets from a dataset with truth.
///
/// Test and validation sets are carved out first, stratified by class.
/// Of the remaining anomalies, `ceil(ratio * n)` (at least one) are labeled;
/// every other remaining sample, hidden anomalies included, is unlabeled.
pub fn make_weak_split(dataset: &Dataset, config: &SplitConfig) -> Result<WeakSplit> {
    config.validate()?;
    let mut normals = Vec::new();
    let mut anomalies = Vec::new();
    for s in &dataset.samples {
        match s.truth {
            Some(Truth::Normal) => normals.push(s.clone()),
            Some(Truth::Anomaly) => anomalies.push(s.clone()),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "sample {} has no ground-truth label; weak splits need truth",
                    s.id
                )))
            }
        }
    }
    if anomalies.is_empty() {
        return Err(Error::NoLabeledAnomalies);
    }
    for s in normals.iter_mut().chain(anomalies.iter_mut()) {
        s.weak_label = WeakLabel::Unlabeled;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    normals.shuffle(&mut rng);
    anomalies.shuffle(&mut rng);

    let carve = |pool: &mut Vec<Sample>, frac: f64| -> Vec<Sample> {
        let n = ((pool.len() as f64) * frac).round() as usize;
        pool.drain(..n.min(pool.len())).collect()
    };
    let mut test = carve(&mut normals, config.test_fraction);
    test.extend(carve(&mut anomalies, config.test_fraction));
    let val_normals = carve(&mut normals, config.val_fraction);
    let val_anomalies = carve(&mut anomalies, config.val_fraction);

    if anomalies.is_empty() {
        return Err(Error::InvalidConfig(
            "no anomalies remain for training after carving validation/test sets".into(),
        ));
    }
    let (train_anomalies, mut hidden) = weakly_label(anomalies, config.labeled_anomaly_ratio);

    if let Some(c) = config.target_contamination {
        let wanted = (c * normals.len() as f64 / (1.0 - c)).round() as usize;
        if wanted > hidden.len() {
            return Err(Error::InvalidConfig(format!(
                "contamination {c} needs {wanted} unlabeled anomalies but only {} remain",
                hidden.len()
            )));
        }
        hidden.truncate(wanted);
    }

    let mut train_unlabeled = normals;
    train_unlabeled.extend(hidden);
    train_unlabeled.shuffle(&mut rng);

    let (val_labeled, val_hidden) = weakly_label(val_anomalies, config.labeled_anomaly_ratio);
    let mut val = val_normals;
    val.extend(val_labeled);
    val.extend(val_hidden);
    val.shuffle(&mut rng);
    test.shuffle(&mut rng);

    Ok(WeakSplit {
        train_unlabeled,
        train_anomalies,
        val,
        test,
    })
}

/// Builds a split from a column of weak labels read into `truth`
/// (anomaly = labeled anomaly, normal = unlabeled). A `val_fraction` share of
/// each group is held out for validation, always leaving one labeled anomaly
/// for training. Nothing carries ground truth and the test set is empty.
pub fn split_weak_labels(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<WeakSplit> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig(format!("validation fraction {val_fraction} is outside [0, 1)")));
    }
    let mut unlabeled = Vec::new();
    let mut labeled = Vec::new();
    for s in &dataset.samples {
        let (pool, weak_label) = match s.truth {
            Some(Truth::Anomaly) => (&mut labeled, WeakLabel::LabeledAnomaly),
            Some(Truth::Normal) => (&mut unlabeled, WeakLabel::Unlabeled),
            None => {
                return Err(Error::InvalidConfig(format!("sample {} has no weak label", s.id)));
            }
        };
        pool.push(Sample { weak_label, truth: None, ..s.clone() });
    }
    if labeled.is_empty() {
        return Err(Error::NoLabeledAnomalies);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unlabeled.shuffle(&mut rng);
    labeled.shuffle(&mut rng);
    let share = |n: usize| ((n as f64) * val_fraction).round() as usize;
    let mut val: Vec<Sample> = unlabeled.drain(..share(unlabeled.len())).collect();
    val.extend(labeled.drain(..share(labeled.len()).min(labeled.len() - 1)));
    val.shuffle(&mut rng);
    Ok(WeakSplit {
        train_unlabeled: unlabeled,
        train_anomalies: labeled,
        val,
        test: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(n_normal: usize, n_anomaly: usize) -> Dataset {
        let samples = (0..n_normal + n_anomaly)
            .map(|i| {
                let truth = if i < n_normal { Truth::Normal } else { Truth::Anomaly };
                Sample::unlabeled(i, vec![i as f64], Some(truth))
            })
            .collect();
        Dataset {
            feature_names: vec!["x".into()],
            samples,
        }
    }

    fn no_holdout(ratio: f64) -> SplitConfig {
        SplitConfig {
            labeled_anomaly_ratio: ratio,
            val_fraction: 0.0,
            test_fraction: 0.0,
            seed: 42,
            target_contamination: None,
        }
    }

    fn hidden(split: &WeakSplit) -> usize {
        split
            .train_unlabeled
            .iter()
            .filter(|s| s.truth == Some(Truth::Anomaly))
            .count()
    }

    #[test]
    fn one_percent_of_hundred_is_one() {
        let s = make_weak_split(&toy(500, 100), &no_holdout(0.01)).unwrap();
        assert_eq!(s.train_anomalies.len(), 1);
        assert_eq!(hidden(&s), 99);
    }

    #[test]
    fn full_ratio_leaves_no_contamination() {
        let s = make_weak_split(&toy(50, 10), &no_holdout(1.0)).unwrap();
        assert_eq!(s.train_anomalies.len(), 10);
        assert_eq!(hidden(&s), 0);
    }

    #[test]
    fn five_percent_of_forty() {
        let s = make_weak_split(&toy(200, 40), &no_holdout(0.05)).unwrap();
        assert_eq!(s.train_anomalies.len(), 2);
        assert_eq!(hidden(&s), 38);
    }

    #[test]
    fn tiny_ratio_still_labels_one() {
        assert_eq!(labeled_count(0.0, 5), 1);
        assert_eq!(labeled_count(0.01, 3), 1);
        assert_eq!(labeled_count(0.5, 0), 0);
    }

    #[test]
    fn disjoint_and_deterministic() {
        let cfg = SplitConfig {
            labeled_anomaly_ratio: 0.1,
            seed: 9,
            ..SplitConfig::default()
        };
        let d = toy(300, 30);
        let a = make_weak_split(&d, &cfg).unwrap();
        let b = make_weak_split(&d, &cfg).unwrap();
        assert_eq!(a, b);
        let mut seen = HashSet::new();
        for s in a.train_unlabeled.iter().chain(&a.train_anomalies).chain(&a.val).chain(&a.test) {
            assert!(seen.insert(s.id), "id {} appears twice", s.id);
        }
        assert_eq!(seen.len(), 330);
        // 20% of 30 anomalies go to test, 10% of the remaining 24 (2) to val.
        let remaining = 30 - 6 - 2;
        assert_eq!(hidden(&a), remaining - a.train_anomalies.len());
    }

    #[test]
    fn contamination_target() {
        let cfg = SplitConfig {
            target_contamination: Some(0.05),
            ..no_holdout(0.1)
        };
        let s = make_weak_split(&toy(950, 100), &cfg).unwrap();
        assert_eq!(hidden(&s), 50);
        assert!((s.contamination() - 0.05).abs() < 1e-12);
        let zero = make_weak_split(&toy(950, 100), &SplitConfig { target_contamination: Some(0.0), ..cfg }).unwrap();
        assert_eq!(hidden(&zero), 0);
    }

    #[test]
    fn errors() {
        assert!(make_weak_split(&toy(10, 0), &no_holdout(0.1)).is_err());
        assert!(make_weak_split(&toy(10, 2), &no_holdout(1.5)).is_err());
        let mut d = toy(10, 2);
        d.samples[0].truth = None;
        assert!(make_weak_split(&d, &no_holdout(0.1)).is_err());
    }

    #[test]
    fn weak_label_split_keeps_a_training_label() {
        let ds = toy(90, 1);
        let split = split_weak_labels(&ds, 0.5, 3).unwrap();
        assert_eq!(split.train_anomalies.len(), 1);
        assert_eq!(split.train_unlabeled.len(), 45);
        assert_eq!(split.val.len(), 45);
        assert!(split.test.is_empty());
        let all = split.train_unlabeled.iter().chain(&split.train_anomalies).chain(&split.val);
        assert!(all.clone().all(|s| s.truth.is_none()));
        assert_eq!(all.map(|s| s.id).collect::<HashSet<_>>().len(), 91);

        let four = split_weak_labels(&toy(10, 4), 0.5, 3).unwrap();
        assert_eq!(four.train_anomalies.len(), 2);
        assert_eq!(four.val.iter().filter(|s| s.weak_label == WeakLabel::LabeledAnomaly).count(), 2);
        assert!(matches!(split_weak_labels(&toy(5, 0), 0.1, 0), Err(Error::NoLabeledAnomalies)));
    }
}
