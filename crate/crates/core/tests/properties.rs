use std::collections::HashSet;

use proptest::prelude::*;
use protoad::data::{make_weak_split, sample_batch, Dataset, NormStats, Sample, SplitConfig, Truth, WeakLabel};
use protoad::nn::kmeans;
use protoad::prototypes::{
    contrastive_grads, kl_clustering_loss, normality_weight, PrototypeBank,
};
use protoad::recon::{loss_recon_anomaly, loss_recon_anomaly_grad, loss_recon_unlabeled};
use protoad::scorer::{score_loss, ScoreLossKind};
use protoad::trainer::dynamic_weights;
use protoad::{auc_pr, auc_roc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n)
}

/// Scores with at least one positive and one negative label.
fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| (prop::collection::vec(-3.0..3.0f64, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, t)| t.iter().any(|&b| b) && t.iter().any(|&b| !b))
}

/// Random orthogonal matrix from Gram-Schmidt on a seeded Gaussian draw.
fn rotation(dim: usize, raw: &[f64]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in raw.chunks(dim) {
        let mut v = c.to_vec();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.iter().map(|x| x / n).collect());
    }
    basis
}

fn apply(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dataset(n_normal: usize, n_anomaly: usize) -> Dataset {
    let samples = (0..n_normal + n_anomaly)
        .map(|i| {
            let t = if i < n_normal { Truth::Normal } else { Truth::Anomaly };
            Sample::unlabeled(i, vec![i as f64], Some(t))
        })
        .collect();
    Dataset { feature_names: vec!["x".into()], samples }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kmeans_inertia_never_increases(points in rows(40, 3), k in 1usize..6, seed in 0u64..100) {
        let r = kmeans(&points, k, seed).unwrap();
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn similarity_is_rotation_invariant(
        protos in rows(3, 4),
        z in prop::collection::vec(-3.0..3.0f64, 4),
        raw in prop::collection::vec(-1.0..1.0f64, 16),
    ) {
        prop_assume!(z.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        prop_assume!(protos.iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let q = rotation(4, &raw);
        prop_assume!(q.iter().all(|r| r.iter().all(|v| v.is_finite())));
        let bank = PrototypeBank::new(&protos, 1.0, 1.0).unwrap();
        let rotated: Vec<Vec<f64>> = protos.iter().map(|p| apply(&q, p)).collect();
        let bank_r = PrototypeBank::new(&rotated, 1.0, 1.0).unwrap();
        let a = bank.similarity(&z).unwrap();
        let b = bank_r.similarity(&apply(&q, &z)).unwrap();
        for (x, y) in a.s.iter().zip(&b.s) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(*x > 0.0 && *x <= 1.0);
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_for_one_sample(sims in rows(6, 3)) {
        let sims: Vec<Vec<f64>> = sims.iter().map(|r| r.iter().map(|v| 0.05 + v.abs() / 5.5).collect()).collect();
        prop_assert!(kl_clustering_loss(&sims).loss >= -1e-15);
        prop_assert!(kl_clustering_loss(&sims[..1]).loss.abs() < 1e-15);
    }

    #[test]
    fn contrastive_gradient_signs(
        unl in prop::collection::vec(0.01..1.0f64, 1..8),
        anom in prop::collection::vec(0.01..1.0f64, 1..4),
        w in 0.01..1.0f64,
    ) {
        let weights = vec![w; unl.len()];
        let g = contrastive_grads(&unl, &weights, &anom).unwrap();
        prop_assert!(g.anom_smax.iter().all(|&v| v > 0.0));
        prop_assert!(g.unl_smax.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn weight_increases_with_similarity(a in 0.0..1.0f64, b in 0.0..1.0f64, beta in 0.1..5.0f64) {
        prop_assume!(a < b);
        prop_assert!(normality_weight(a, beta) < normality_weight(b, beta));
    }

    #[test]
    fn hinge_is_inactive_past_the_margin(
        mean_u in 0.0..0.2f64,
        excess in prop::collection::vec(0.02..1.0f64, 1..6),
    ) {
        let errors: Vec<f64> = excess.iter().map(|x| mean_u + x + 1e-12).collect();
        prop_assert_eq!(loss_recon_anomaly(&errors, mean_u, 0.02).unwrap(), 0.0);
        prop_assert!(loss_recon_anomaly_grad(&errors, mean_u, 0.02).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hinge_gradient_takes_two_values(errors in prop::collection::vec(0.0..0.5f64, 1..8), mean_u in 0.0..0.3f64) {
        let g = loss_recon_anomaly_grad(&errors, mean_u, 0.02);
        let active = -1.0 / errors.len() as f64;
        prop_assert!(g.iter().all(|&v| v == 0.0 || v == active));
        prop_assert!(loss_recon_anomaly(&errors, mean_u, 0.02).unwrap() >= 0.0);
        let w = vec![0.6; errors.len()];
        prop_assert!(loss_recon_unlabeled(&errors, &w).unwrap() >= 0.0);
    }

    #[test]
    fn score_loss_downweighting(
        scores in prop::collection::vec(0.001..0.999f64, 1..8),
        w in prop::collection::vec(0.0..1.0f64, 8),
        i in 0usize..8,
        cut in 0.0..1.0f64,
    ) {
        let n = scores.len();
        let i = i % n;
        let w = w[..n].to_vec();
        let mut lower = w.clone();
        lower[i] *= cut;
        let k = ScoreLossKind::SquaredError;
        prop_assert!(score_loss(&scores, &lower, &[0.7], k).unwrap() <= score_loss(&scores, &w, &[0.7], k).unwrap());
    }

    #[test]
    fn dwa_weights_sum_to_three(history in prop::collection::vec(prop::array::uniform3(0.0..10.0f64), 0..6)) {
        let w = dynamic_weights(&history, 2.0);
        prop_assert!(w.iter().all(|v| *v > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-9);
        if history.len() < 2 {
            prop_assert_eq!(w, [1.0; 3]);
        }
    }

    #[test]
    fn roc_invariant_under_monotone_maps((scores, truth) in labeled_scores(), a in 0.1..4.0f64, b in -2.0..2.0f64) {
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert!((auc_roc(&scores, &truth).unwrap() - auc_roc(&mapped, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((auc_pr(&scores, &truth).unwrap() - auc_pr(&mapped, &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_iff_separated((scores, truth) in labeled_scores()) {
        let min_pos = scores.iter().zip(&truth).filter(|(_, &t)| t).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let max_neg = scores.iter().zip(&truth).filter(|(_, &t)| !t).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
        let separated = min_pos > max_neg;
        let roc = auc_roc(&scores, &truth).unwrap();
        let pr = auc_pr(&scores, &truth).unwrap();
        prop_assert_eq!(roc == 1.0, separated);
        prop_assert_eq!(pr == 1.0, separated);
        prop_assert!((0.0..=1.0).contains(&roc) && (0.0..=1.0).contains(&pr));
    }

    #[test]
    fn splits_are_disjoint_deterministic_and_accounted(
        n_normal in 20usize..200,
        n_anomaly in 1usize..40,
        ratio in 0.0..1.0f64,
        seed in 0u64..1000,
    ) {
        let ds = dataset(n_normal, n_anomaly);
        let cfg = SplitConfig { labeled_anomaly_ratio: ratio, seed, ..SplitConfig::default() };
        let Ok(split) = make_weak_split(&ds, &cfg) else {
            // Too few anomalies for the training share.
            return Ok(());
        };
        prop_assert_eq!(&split, &make_weak_split(&ds, &cfg).unwrap());
        let parts = [&split.train_unlabeled, &split.train_anomalies, &split.val, &split.test];
        let mut seen = HashSet::new();
        for p in parts {
            for s in p.iter() {
                prop_assert!(seen.insert(s.id), "id {} appears twice", s.id);
            }
        }
        prop_assert_eq!(seen.len(), ds.len());
        prop_assert!(split.train_anomalies.iter().all(|s| s.weak_label == WeakLabel::LabeledAnomaly));
        prop_assert!(split.train_unlabeled.iter().all(|s| s.weak_label == WeakLabel::Unlabeled));
        let anomalies = |v: &[Sample]| v.iter().filter(|s| s.truth == Some(Truth::Anomaly)).count();
        let held_out = anomalies(&split.val) + anomalies(&split.test);
        let remaining = ds.n_anomalies() - held_out;
        prop_assert_eq!(anomalies(&split.train_unlabeled), remaining - split.train_anomalies.len());
    }

    #[test]
    fn batches_have_exact_sizes(n_u in 1usize..300, n_a in 1usize..50, b_u in 1usize..200, b_a in 1usize..40, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = vec![0u8; n_u];
        let a = vec![0u8; n_a];
        let b = sample_batch(&u, &a, b_u, b_a, &mut rng).unwrap();
        prop_assert_eq!(b.unlabeled.len(), b_u);
        prop_assert_eq!(b.anomalies.len(), b_a);
        prop_assert!(b.unlabeled.iter().all(|&i| i < n_u) && b.anomalies.iter().all(|&i| i < n_a));
    }

    #[test]
    fn normalized_training_rows_lie_in_unit_box(train in rows(30, 4), test in rows(10, 4)) {
        let stats = NormStats::fit(train.iter().map(Vec::as_slice)).unwrap();
        prop_assert!(stats.min.iter().zip(&stats.max).all(|(lo, hi)| lo <= hi));
        for r in train.iter().chain(&test) {
            prop_assert!(stats.transform(r).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
