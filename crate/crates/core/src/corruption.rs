//! Synthetic Gaussian-design sensing data and contamination adversaries.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensing::{FactorMatrix, SensingSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorruptionError {
    #[error("bad spectrum: {0}")]
    BadSpectrum(String),
    #[error("eps * n = {eps} * {n} < 1: nothing to corrupt")]
    EpsTooSmall { eps: f64, n: usize },
    #[error("eps must lie in [0, 1/2), got {0}")]
    InvalidEps(f64),
    #[error("counterexample adversary needs noiseless samples; sample {index} has residual {residual}")]
    RequiresNoiseless { index: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Splits one user seed into independent streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub u_star: FactorMatrix,
    pub m_star: DMatrix<f64>,
    /// Singular values of `m_star`, descending.
    pub spectrum: Vec<f64>,
    pub sigma_1_star: f64,
    pub sigma_r_star: f64,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.m_star.nrows()
    }

    pub fn r(&self) -> usize {
        self.spectrum.len()
    }
}

/// `U* = T D^{1/2}` with `T` Haar-distributed orthonormal columns and
/// `D = diag(spectrum)`.
pub fn generate_ground_truth(
    d: usize,
    r: usize,
    spectrum: &[f64],
    seed: u64,
) -> Result<GroundTruth, CorruptionError> {
    if r == 0 || r > d {
        return Err(CorruptionError::BadSpectrum(format!("need 1 <= r <= d, got r={r}, d={d}")));
    }
    if spectrum.len() != r {
        return Err(CorruptionError::BadSpectrum(format!(
            "expected {r} values, got {}",
            spectrum.len()
        )));
    }
    if let Some(bad) = spectrum.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(CorruptionError::BadSpectrum(format!("values must be positive, got {bad}")));
    }
    let mut spectrum = spectrum.to_vec();
    spectrum.sort_by(|a, b| b.total_cmp(a));

    let mut rng = rng_for(seed, 0);
    let qr = gaussian_matrix(&mut rng, d, r).qr();
    let (mut t, rr) = (qr.q(), qr.r());
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            t.column_mut(j).neg_mut();
        }
    }
    let scale = DVector::from_iterator(r, spectrum.iter().map(|s| s.sqrt()));
    let u_star = FactorMatrix(t * DMatrix::from_diagonal(&scale));
    let m_star = u_star.gram();
    Ok(GroundTruth {
        u_star,
        m_star,
        sigma_1_star: spectrum[0],
        sigma_r_star: spectrum[r - 1],
        spectrum,
    })
}

/// `n` samples `y = <A, M*> + sigma * z` with standard Gaussian `A` and `z`.
///
/// Measurement matrices and noise come from separate streams, so the same
/// seed gives the same `A_i` for every `sigma`.
pub fn sample_clean(gt: &GroundTruth, n: usize, sigma: f64, seed: u64) -> Vec<SensingSample> {
    let d = gt.d();
    let mut a_rng = rng_for(seed, 1);
    let mut noise_rng = rng_for(seed, 2);
    (0..n)
        .map(|_| {
            let a = gaussian_matrix(&mut a_rng, d, d);
            let z: f64 = noise_rng.sample(StandardNormal);
            let mut y = a.dot(&gt.m_star);
            if sigma != 0.0 {
                y += sigma * z;
            }
            SensingSample { a, y }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    /// Fresh Gaussian `A` with `y ~ Uniform(-10 ||M*||_F, 10 ||M*||_F)`.
    RandomReplacement,
    /// `A` scaled by 100 and `y = 100 ||M*||_F`.
    LargeOutliers,
    /// Planted pairs cancelling `E[y A]`; see [`counterexample_adversary`].
    Counterexample,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::RandomReplacement => "random_replacement",
            Strategy::LargeOutliers => "large_outliers",
            Strategy::Counterexample => "counterexample",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Strategy::None),
            "random_replacement" => Ok(Strategy::RandomReplacement),
            "large_outliers" => Ok(Strategy::LargeOutliers),
            "counterexample" => Ok(Strategy::Counterexample),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    pub strategy: Strategy,
    pub eps: f64,
    pub seed: u64,
}

impl CorruptionPlan {
    /// Number of replaced samples, `floor(eps n)`.
    pub fn count(&self, n: usize) -> usize {
        (self.eps * n as f64).floor() as usize
    }
}

/// Replaces exactly `floor(eps n)` samples. Returns the corrupted set and the
/// sorted replaced positions; every other sample passes through unchanged.
pub fn corrupt(
    samples: &[SensingSample],
    plan: &CorruptionPlan,
    gt: &GroundTruth,
) -> Result<(Vec<SensingSample>, Vec<usize>), CorruptionError> {
    if !(plan.eps >= 0.0 && plan.eps < 0.5) {
        return Err(CorruptionError::InvalidEps(plan.eps));
    }
    if plan.strategy == Strategy::None {
        return Ok((samples.to_vec(), Vec::new()));
    }
    let n = samples.len();
    let m = plan.count(n);
    if m == 0 {
        return Err(CorruptionError::EpsTooSmall { eps: plan.eps, n });
    }
    check_dims(samples, gt)?;
    if plan.strategy == Strategy::Counterexample {
        return counterexample_with_indices(samples, plan.eps, gt, plan.seed);
    }

    let mut rng = rng_for(plan.seed, 3);
    let mut idx = sample_indices(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let f = gt.m_star.norm();
    let d = gt.d();
    let mut out = samples.to_vec();
    for &i in &idx {
        out[i] = match plan.strategy {
            Strategy::RandomReplacement => {
                let a = gaussian_matrix(&mut rng, d, d);
                let y = rng.random_range(-10.0 * f..=10.0 * f);
                SensingSample { a, y }
            }
            Strategy::LargeOutliers => SensingSample {
                a: &samples[i].a * 100.0,
                y: 100.0 * f,
            },
            Strategy::None | Strategy::Counterexample => unreachable!(),
        };
    }
    Ok((out, idx))
}

/// Discards a random `floor(eps n)` samples and plants pairs `(E_j, z_j)`
/// with `E_j = P / (eps' z_j) + A'_j`, `P = -(1/n) sum_{kept} y_i A_i` and
/// `eps' = floor(eps n) / n`, so the planted terms cancel the clean sum of
/// `y_i A_i` exactly. `|z_j|` is uniform on `[||M*||_F / 2, 2 ||M*||_F]`
/// with a random sign. Planted pairs take the discarded positions.
pub fn counterexample_adversary(
    samples: &[SensingSample],
    eps: f64,
    gt: &GroundTruth,
    seed: u64,
) -> Result<Vec<SensingSample>, CorruptionError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(CorruptionError::InvalidEps(eps));
    }
    let n = samples.len();
    if (eps * n as f64).floor() < 1.0 {
        return Err(CorruptionError::EpsTooSmall { eps, n });
    }
    check_dims(samples, gt)?;
    counterexample_with_indices(samples, eps, gt, seed).map(|(out, _)| out)
}

fn counterexample_with_indices(
    samples: &[SensingSample],
    eps: f64,
    gt: &GroundTruth,
    seed: u64,
) -> Result<(Vec<SensingSample>, Vec<usize>), CorruptionError> {
    for (index, s) in samples.iter().enumerate() {
        let residual = s.y - s.a.dot(&gt.m_star);
        if residual.abs() > 1e-9 * (1.0 + s.y.abs()) {
            return Err(CorruptionError::RequiresNoiseless { index, residual });
        }
    }
    let n = samples.len();
    let m = (eps * n as f64).floor() as usize;
    let d = gt.d();
    let mut rng = rng_for(seed, 4);
    let mut idx = sample_indices(&mut rng, n, m).into_vec();
    idx.sort_unstable();

    let mut discarded = vec![false; n];
    for &i in &idx {
        discarded[i] = true;
    }
    let mut p = DMatrix::zeros(d, d);
    for (s, _) in samples.iter().zip(&discarded).filter(|(_, &gone)| !gone) {
        p -= &s.a * s.y;
    }
    p /= n as f64;

    let eps_eff = m as f64 / n as f64;
    let f = gt.m_star.norm();
    let mut out = samples.to_vec();
    for &i in &idx {
        let radius = rng.random_range(0.5 * f..=2.0 * f);
        let z = if rng.random_bool(0.5) { radius } else { -radius };
        let a = &p / (eps_eff * z) + gaussian_matrix(&mut rng, d, d);
        out[i] = SensingSample { a, y: z };
    }
    Ok((out, idx))
}

fn check_dims(samples: &[SensingSample], gt: &GroundTruth) -> Result<(), CorruptionError> {
    let d = gt.d();
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.dim() != d) {
        return Err(CorruptionError::DimensionMismatch(format!(
            "sample {i} is {}x{}, ground truth is {d}x{d}",
            s.a.nrows(),
            s.a.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ground_truth_examples() {
        let gt = generate_ground_truth(5, 1, &[1.0], 7).unwrap();
        assert_relative_eq!(gt.m_star.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gt.u_star.0.norm(), 1.0, epsilon = 1e-12);

        let gt = generate_ground_truth(4, 2, &[1.0, 3.0], 7).unwrap();
        assert_eq!(gt.sigma_1_star, 3.0);
        assert_eq!(gt.sigma_r_star, 1.0);
        assert_eq!(108.0 / gt.sigma_r_star, 108.0);
        let sv = gt.m_star.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert_relative_eq!(sv[0], 3.0, max_relative = 1e-10);
        assert_relative_eq!(sv[1], 1.0, max_relative = 1e-10);
        assert!(sv[2].abs() < 1e-10 && sv[3].abs() < 1e-10);

        let again = generate_ground_truth(4, 2, &[1.0, 3.0], 7).unwrap();
        assert_eq!(gt, again);
    }

    #[test]
    fn bad_spectra() {
        for (d, r, s) in [(3, 1, vec![0.0]), (3, 2, vec![1.0]), (2, 3, vec![1.0; 3]), (3, 1, vec![f64::NAN])] {
            assert!(matches!(
                generate_ground_truth(d, r, &s, 0),
                Err(CorruptionError::BadSpectrum(_))
            ));
        }
    }

    #[test]
    fn noiseless_samples_are_exact() {
        let gt = generate_ground_truth(4, 2, &[2.0, 1.0], 1).unwrap();
        for s in sample_clean(&gt, 50, 0.0, 3) {
            assert_eq!(s.y - s.a.dot(&gt.m_star), 0.0);
        }
    }

    #[test]
    fn none_is_identity_and_counts_are_floored() {
        let gt = generate_ground_truth(3, 1, &[1.0], 1).unwrap();
        let clean = sample_clean(&gt, 100, 0.0, 2);
        let plan = CorruptionPlan { strategy: Strategy::None, eps: 0.1, seed: 0 };
        let (out, idx) = corrupt(&clean, &plan, &gt).unwrap();
        assert_eq!(out, clean);
        assert!(idx.is_empty());

        for strategy in [Strategy::RandomReplacement, Strategy::LargeOutliers, Strategy::Counterexample] {
            let plan = CorruptionPlan { strategy, eps: 0.1, seed: 5 };
            let (out, idx) = corrupt(&clean, &plan, &gt).unwrap();
            assert_eq!(idx.len(), 10);
            let changed: Vec<usize> = (0..100).filter(|&i| out[i] != clean[i]).collect();
            assert_eq!(changed, idx);
        }
    }

    #[test]
    fn eps_too_small() {
        let gt = generate_ground_truth(3, 1, &[1.0], 1).unwrap();
        let clean = sample_clean(&gt, 10, 0.0, 2);
        let plan = CorruptionPlan { strategy: Strategy::LargeOutliers, eps: 0.05, seed: 0 };
        assert!(matches!(corrupt(&clean, &plan, &gt), Err(CorruptionError::EpsTooSmall { .. })));
    }

    #[test]
    fn counterexample_rejects_noise() {
        let gt = generate_ground_truth(3, 1, &[1.0], 1).unwrap();
        let noisy = sample_clean(&gt, 100, 0.5, 2);
        assert!(matches!(
            counterexample_adversary(&noisy, 0.1, &gt, 0),
            Err(CorruptionError::RequiresNoiseless { .. })
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 3), derive_seed(9, 3));
    }
}
