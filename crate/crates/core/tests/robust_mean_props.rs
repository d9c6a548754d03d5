use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use robust_sosp::robust_mean::{
    find_filter_threshold, robust_mean_estimate, PointCloud, WeightedSet,
};

fn cloud_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (20usize..80, 1usize..5).prop_flat_map(|(n, k)| {
        (Just(n), Just(k), prop::collection::vec(-10.0f64..10.0, n * k))
    })
}

fn cloud(n: usize, k: usize, data: &[f64]) -> PointCloud {
    PointCloud::from_matrix(DMatrix::from_row_slice(n, k, data)).unwrap()
}

/// Threshold by sorting: largest score whose upper tail weight reaches eps.
fn threshold_by_sorting(scores: &[f64], weights: &[f64], eps: f64) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut distinct: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    distinct.dedup();
    for t in distinct {
        let tail: f64 = scores
            .iter()
            .zip(weights)
            .filter(|(g, _)| **g >= t)
            .map(|(_, w)| w)
            .sum();
        if tail >= eps {
            return t;
        }
    }
    scores.iter().copied().fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_matches_sorting(
        pairs in prop::collection::vec((0u32..20, 0.0f64..1.0), 1..60),
        eps in 0.01f64..0.6,
    ) {
        // Small integer scores force ties.
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let total: f64 = pairs.iter().map(|p| p.1).sum::<f64>().max(1e-12);
        let weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
        let got = find_filter_threshold(&scores, &WeightedSet::from_weights(weights.clone()), eps).unwrap();
        prop_assert_eq!(got, threshold_by_sorting(&scores, &weights, eps));
    }

    #[test]
    fn weights_stay_in_range((n, k, data) in cloud_strategy(), eps in 0.02f64..0.3) {
        let est = robust_mean_estimate(&cloud(n, k, &data), eps).unwrap();
        let cap = 1.0 / n as f64;
        prop_assert!(est.weights.weights().iter().all(|&w| (0.0..=cap).contains(&w)));
        prop_assert!(est.weights.weights().iter().any(|&w| w > 0.0));
        prop_assert!(est.rounds <= n);
        prop_assert!((est.final_weight_mass - est.weights.mass()).abs() <= 1e-15);
    }

    #[test]
    fn mean_lies_in_bounding_box((n, k, data) in cloud_strategy(), eps in 0.02f64..0.3) {
        let c = cloud(n, k, &data);
        let est = robust_mean_estimate(&c, eps).unwrap();
        for j in 0..k {
            let col = c.as_matrix().column(j);
            prop_assert!(est.mean[j] >= col.min() - 1e-9 && est.mean[j] <= col.max() + 1e-9);
        }
    }

    #[test]
    fn translation_equivariance(
        (n, k, data) in cloud_strategy(),
        eps in 0.02f64..0.3,
        shift in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let c = cloud(n, k, &data);
        let shift = DVector::from_iterator(k, shift.into_iter().take(k));
        let moved = DMatrix::from_fn(n, k, |i, j| c.as_matrix()[(i, j)] + shift[j]);
        let a = robust_mean_estimate(&c, eps).unwrap();
        let b = robust_mean_estimate(&PointCloud::from_matrix(moved).unwrap(), eps).unwrap();
        prop_assert!((b.mean - (a.mean + shift)).amax() <= 1e-8);
    }

    #[test]
    fn permutation_equivariance(
        (n, k, data) in cloud_strategy(),
        eps in 0.02f64..0.3,
        rot in 1usize..1000,
    ) {
        let c = cloud(n, k, &data);
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
        // i -> 7i + rot is a bijection mod n only when gcd(7, n) = 1.
        prop_assume!(n % 7 != 0);
        let permuted = DMatrix::from_fn(n, k, |i, j| c.as_matrix()[(perm[i], j)]);
        let a = robust_mean_estimate(&c, eps).unwrap();
        let b = robust_mean_estimate(&PointCloud::from_matrix(permuted).unwrap(), eps).unwrap();
        prop_assert!((a.mean - b.mean).amax() <= 1e-8);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b.weights.weights()[i] - a.weights.weights()[p]).abs() <= 1e-12);
        }
    }

    #[test]
    fn estimate_is_deterministic((n, k, data) in cloud_strategy(), eps in 0.02f64..0.3) {
        let c = cloud(n, k, &data);
        prop_assert_eq!(robust_mean_estimate(&c, eps).unwrap(), robust_mean_estimate(&c, eps).unwrap());
    }
}

#[test]
fn distant_cluster_is_ignored() {
    // Clean points on a grid around the origin plus a tight cluster at 1000.
    let n = 400;
    let bad = 20;
    let mut rows = Vec::new();
    for i in 0..n - bad {
        let t = i as f64 / (n - bad) as f64 * std::f64::consts::TAU;
        rows.push(vec![t.cos(), t.sin(), (3.0 * t).cos()]);
    }
    for i in 0..bad {
        rows.push(vec![1000.0 + i as f64 * 1e-3, 1000.0, -1000.0]);
    }
    let c = PointCloud::from_rows(&rows).unwrap();
    let est = robust_mean_estimate(&c, 0.05).unwrap();
    assert!(est.mean.norm() <= 0.5, "{}", est.mean);
    assert!(est.weights.weights()[n - bad..].iter().all(|&w| w == 0.0));
}
