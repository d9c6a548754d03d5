//! Filter-based robust mean estimation under strong contamination.
//!
//! The estimator keeps a weight per point, starting uniform at `1/n`. Each
//! round it projects the weighted, centered cloud onto the top eigenvector of
//! the weighted covariance, finds the largest score threshold that still
//! captures `eps` of the weight, and down-weights every point above the
//! threshold in proportion to its score. The point with the largest score is
//! removed outright. Rounds continue until the total weight falls below
//! `1 - 2 eps`. No covariance bound is needed as input.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::linalg::{sym_eigen_sorted, top_eigenpair_psd};

/// Rounds stop once the largest score is at or below this value.
pub const NO_PROGRESS_SCORE: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustMeanError {
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("contamination fraction {0} is outside (0, 1/2)")]
    EpsOutOfRange(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("variance scale must be positive and finite, got {0}")]
    InvalidVariance(f64),
}

/// A finite multiset of `n` points in `R^k`, stored one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: DMatrix<f64>,
}

impl PointCloud {
    pub fn from_rows(points: &[Vec<f64>]) -> Result<Self, RobustMeanError> {
        let first = points.first().ok_or(RobustMeanError::EmptyInput)?;
        let k = first.len();
        if k == 0 {
            return Err(RobustMeanError::EmptyInput);
        }
        for (index, p) in points.iter().enumerate() {
            if p.len() != k {
                return Err(RobustMeanError::DimensionMismatch {
                    index,
                    expected: k,
                    found: p.len(),
                });
            }
        }
        let data = DMatrix::from_fn(points.len(), k, |i, j| points[i][j]);
        Self::from_matrix(data)
    }

    /// Wraps an `n x k` matrix whose rows are the points.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self, RobustMeanError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(RobustMeanError::EmptyInput);
        }
        for i in 0..data.nrows() {
            if data.row(i).iter().any(|v| !v.is_finite()) {
                return Err(RobustMeanError::NonFinite { index: i });
            }
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn point(&self, i: usize) -> RowDVector<f64> {
        self.data.row(i).into_owned()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn plain_mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }
}

/// Per-point weights of the filter. Entries stay in `[0, 1/n]` and only
/// ever decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSet {
    weights: Vec<f64>,
}

impl WeightedSet {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `||w||_1`.
    pub fn mass(&self) -> f64 {
        lane_sum(self.weights.iter().copied())
    }

    /// Weighted mean `sum_x w(x) x / ||w||_1`.
    pub fn weighted_mean(&self, cloud: &PointCloud) -> DVector<f64> {
        weighted_mean_of(cloud.as_matrix(), &self.weights).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub mean: DVector<f64>,
    pub rounds: usize,
    pub final_weight_mass: f64,
    pub weights: WeightedSet,
}

/// Weighted mean over the columns of `x` (one coordinate per column).
/// Offsets are accumulated from the first point with nonzero weight, so
/// identical points reproduce their common value exactly. Zero weights
/// contribute nothing. Returns the mean and the total weight.
fn weighted_mean_of(x: &DMatrix<f64>, weights: &[f64]) -> (DVector<f64>, f64) {
    let k = x.ncols();
    let mass = lane_sum(weights.iter().copied());
    let Some(first) = weights.iter().position(|&w| w > 0.0) else {
        return (DVector::from_element(k, f64::NAN), mass);
    };
    let n = x.nrows();
    let mean = DVector::from_iterator(
        k,
        x.as_slice().chunks_exact(n.max(1)).map(|col| {
            let origin = col[first];
            let offset = lane_sum2(col, weights, |xi, w| w * (xi - origin));
            origin + offset / mass
        }),
    );
    (mean, mass)
}

/// Sum in four interleaved lanes (`acc[i % 4]`), which keeps the
/// dependency chain short. The grouping is fixed, so results are reproducible.
#[inline(always)]
fn lane_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = [0.0; 4];
    for (i, v) in values.enumerate() {
        acc[i & 3] += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `sum_i f(a[i], b[i])` with the same lane grouping as [`lane_sum`], written
/// over 4-chunks so it vectorizes.
#[inline(always)]
fn lane_sum2(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l], y[l]);
        }
    }
    for (l, (&x, &y)) in ta.iter().zip(tb).enumerate() {
        acc[l] += f(x, y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn check_eps(eps: f64) -> Result<(), RobustMeanError> {
    if eps.is_finite() && eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(RobustMeanError::EpsOutOfRange(eps))
    }
}

/// Robust estimate of the mean of an `eps`-corrupted cloud.
///
/// Deterministic in the input order. When `n * eps < 1` there is nothing to
/// filter and the plain mean is returned.
pub fn robust_mean_estimate(
    cloud: &PointCloud,
    eps: f64,
) -> Result<EstimateResult, RobustMeanError> {
    check_eps(eps)?;
    let n = cloud.len();
    let mut weights = WeightedSet::uniform(n);
    if (n as f64) * eps < 1.0 {
        return Ok(EstimateResult {
            mean: cloud.plain_mean(),
            rounds: 0,
            final_weight_mass: weights.mass(),
            weights,
        });
    }

    let rounds = run_filter(cloud.as_matrix(), &mut weights.weights, eps);

    Ok(EstimateResult {
        mean: weights.weighted_mean(cloud),
        rounds,
        final_weight_mass: weights.mass(),
        weights,
    })
}

fn run_filter(x: &DMatrix<f64>, w: &mut Vec<f64>, eps: f64) -> usize {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just checked.
            return unsafe { filter_rounds_avx2(x, w, eps) };
        }
    }
    filter_rounds(x, w, eps)
}

/// Same code as [`filter_rounds`], compiled with AVX2 enabled. No fused
/// multiply-adds are introduced, so both paths give identical results.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn filter_rounds_avx2(x: &DMatrix<f64>, w: &mut Vec<f64>, eps: f64) -> usize {
    filter_rounds(x, w, eps)
}

/// The filter loop proper; updates `w` in place and returns the round count.
#[inline(always)]
fn filter_rounds(x: &DMatrix<f64>, w: &mut Vec<f64>, eps: f64) -> usize {
    let (n, k) = x.shape();
    // Column-major n x k buffers: every pass below runs down contiguous
    // coordinate columns. Points with zero weight stay in place and
    // contribute nothing.
    let mut centered = DMatrix::<f64>::zeros(n, k);
    let mut scaled = DMatrix::<f64>::zeros(n, k);
    let mut sqrt_w = vec![0.0; n];
    let mut proj = vec![0.0; n];
    let mut scores = Vec::with_capacity(n);
    let mut active_w = Vec::with_capacity(n);
    let mut active = Vec::with_capacity(n);
    let mut cov = DMatrix::<f64>::zeros(k, k);
    let mut rounds = 0;

    loop {
        let (mean, mass) = weighted_mean_of(x, w);
        if mass < 1.0 - 2.0 * eps || rounds >= n {
            break;
        }
        for (s, &wi) in sqrt_w.iter_mut().zip(w.iter()) {
            *s = wi.sqrt();
        }
        let xs = x.as_slice();
        let cs = centered.as_mut_slice();
        let ss = scaled.as_mut_slice();
        for j in 0..k {
            let mj = mean[j];
            let col = j * n..(j + 1) * n;
            for (((c, sc), &xi), &s) in cs[col.clone()]
                .iter_mut()
                .zip(&mut ss[col.clone()])
                .zip(&xs[col])
                .zip(&sqrt_w)
            {
                *c = xi - mj;
                *sc = s * *c;
            }
        }
        // Weighted covariance S^T S / ||w||_1 from the sqrt(w)-scaled columns.
        let ss = scaled.as_slice();
        for a in 0..k {
            let col_a = &ss[a * n..(a + 1) * n];
            for b in a..k {
                let col_b = &ss[b * n..(b + 1) * n];
                let c = lane_sum2(col_a, col_b, |p, q| p * q) / mass;
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        let (_, v) = top_eigenpair_psd(&cov);

        proj.fill(0.0);
        let cs = centered.as_slice();
        for (j, &vj) in v.iter().enumerate() {
            for (p, &c) in proj.iter_mut().zip(&cs[j * n..(j + 1) * n]) {
                *p += vj * c;
            }
        }
        active.clear();
        active.extend((0..n).filter(|&i| w[i] > 0.0));
        scores.clear();
        scores.extend(active.iter().map(|&i| proj[i] * proj[i]));
        let max_score = scores.iter().copied().fold(0.0_f64, f64::max);
        if max_score <= NO_PROGRESS_SCORE {
            break;
        }

        active_w.clear();
        active_w.extend(active.iter().map(|&i| w[i]));
        let t = threshold(&scores, &active_w, eps);

        let mut next = w.clone();
        let mut any_left = false;
        for ((&i, &g), &wi) in active.iter().zip(&scores).zip(&active_w) {
            let updated = if g < t {
                wi
            } else if g >= max_score {
                0.0
            } else {
                (wi * (1.0 - g / max_score)).max(0.0)
            };
            any_left |= updated > 0.0;
            next[i] = updated;
        }
        if !any_left {
            // Every remaining point tied at the maximum score; keep the last
            // nonzero weighting so the mean stays defined.
            break;
        }
        *w = next;
        rounds += 1;
    }

    rounds
}

/// Largest realized score `t` with `sum_{g(x) >= t} w(x) >= eps`.
///
/// Falls back to the smallest score when the total weight is below `eps`.
pub fn find_filter_threshold(
    scores: &[f64],
    weights: &WeightedSet,
    eps: f64,
) -> Result<f64, RobustMeanError> {
    if scores.is_empty() || scores.len() != weights.len() {
        return Err(RobustMeanError::EmptyInput);
    }
    Ok(threshold(scores, &weights.weights, eps))
}

/// Weighted quickselect for the largest score whose upper tail holds `eps`
/// of the weight.
fn threshold(scores: &[f64], weights: &[f64], eps: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = scores.iter().copied().zip(weights.iter().copied()).collect();
    let min_score = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut need = eps;
    let mut part: &mut [(f64, f64)] = &mut pairs;
    loop {
        let m = part.len();
        if m == 0 {
            return min_score;
        }
        let pivot = median3(part[0].0, part[m / 2].0, part[m - 1].0);
        // Three-way partition: [> pivot | == pivot | < pivot].
        let (mut gt, mut i, mut lt) = (0, 0, m);
        while i < lt {
            let g = part[i].0;
            if g > pivot {
                part.swap(gt, i);
                gt += 1;
                i += 1;
            } else if g < pivot {
                lt -= 1;
                part.swap(i, lt);
            } else {
                i += 1;
            }
        }
        let w_gt: f64 = part[..gt].iter().map(|p| p.1).sum();
        if w_gt >= need {
            part = &mut part[..gt];
            continue;
        }
        let w_eq: f64 = part[gt..lt].iter().map(|p| p.1).sum();
        if w_gt + w_eq >= need {
            return pivot;
        }
        need -= w_gt + w_eq;
        part = &mut part[lt..];
    }
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Deviation of the worst subset found by the greedy audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `max ||mu_S' - mu|| / sigma`.
    pub mean_deviation: f64,
    /// `max ||Sigma_S' - sigma^2 I||_op / sigma^2`, with `Sigma_S'` the
    /// second moment of `S'` about `mu`.
    pub cov_deviation: f64,
}

/// Greedy audit of the two stability conditions.
///
/// The exact worst case ranges over all subsets with at least `(1 - eps) n`
/// points. This audit only inspects the prefixes of three greedy deletion
/// orders (by leverage, steering the mean, steering the covariance), so the
/// returned values are lower bounds on the true worst case.
pub fn stability_audit(
    cloud: &PointCloud,
    mu: &DVector<f64>,
    sigma2: f64,
    eps: f64,
) -> Result<StabilityReport, RobustMeanError> {
    check_eps(eps)?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(RobustMeanError::InvalidVariance(sigma2));
    }
    let n = cloud.len();
    let k = cloud.dim();
    if mu.len() != k {
        return Err(RobustMeanError::DimensionMismatch {
            index: 0,
            expected: k,
            found: mu.len(),
        });
    }
    let deletions = ((eps * n as f64).floor() as usize).min(n - 1);
    let centered: Vec<DVector<f64>> = (0..n)
        .map(|i| cloud.point(i).transpose() - mu)
        .collect();

    let mut report = StabilityReport {
        mean_deviation: 0.0,
        cov_deviation: 0.0,
    };
    for strategy in [Greedy::Leverage, Greedy::Mean, Greedy::Covariance] {
        let mut state = AuditState::new(&centered, sigma2);
        state.record(&mut report);
        for _ in 0..deletions {
            let victim = state.pick(strategy);
            state.remove(victim);
            state.record(&mut report);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy)]
enum Greedy {
    Leverage,
    Mean,
    Covariance,
}

struct AuditState<'a> {
    centered: &'a [DVector<f64>],
    alive: Vec<bool>,
    count: usize,
    sum: DVector<f64>,
    second: DMatrix<f64>,
    sigma2: f64,
}

impl<'a> AuditState<'a> {
    fn new(centered: &'a [DVector<f64>], sigma2: f64) -> Self {
        let k = centered[0].len();
        let mut sum = DVector::zeros(k);
        let mut second = DMatrix::zeros(k, k);
        for c in centered {
            sum += c;
            second += c * c.transpose();
        }
        Self {
            centered,
            alive: vec![true; centered.len()],
            count: centered.len(),
            sum,
            second,
            sigma2,
        }
    }

    fn excess(&self) -> DMatrix<f64> {
        let k = self.sum.len();
        &self.second / self.count as f64 - DMatrix::identity(k, k) * self.sigma2
    }

    fn record(&self, report: &mut StabilityReport) {
        let mean_dev = (&self.sum / self.count as f64).norm() / self.sigma2.sqrt();
        let (values, _) = sym_eigen_sorted(&self.excess());
        let cov_dev = values[0].abs().max(values[values.len() - 1].abs()) / self.sigma2;
        report.mean_deviation = report.mean_deviation.max(mean_dev);
        report.cov_deviation = report.cov_deviation.max(cov_dev);
    }

    fn pick(&self, strategy: Greedy) -> usize {
        let alive = (0..self.centered.len()).filter(|&i| self.alive[i]);
        let key: Box<dyn Fn(usize) -> f64> = match strategy {
            Greedy::Leverage => Box::new(|i| self.centered[i].norm_squared()),
            Greedy::Mean => {
                let shift = &self.sum / self.count as f64;
                let dir = if shift.norm() > 0.0 {
                    shift.normalize()
                } else {
                    top_eigenpair_psd(&(&self.second / self.count as f64)).1
                };
                // Deleting the point least aligned with the current shift pushes it further.
                Box::new(move |i| -self.centered[i].dot(&dir))
            }
            Greedy::Covariance => {
                let (values, vectors) = sym_eigen_sorted(&self.excess());
                let last = values.len() - 1;
                let (lambda, v) = if values[0].abs() >= values[last].abs() {
                    (values[0], vectors.column(0).into_owned())
                } else {
                    (values[last], vectors.column(last).into_owned())
                };
                // Too much variance along v: drop low-leverage points to raise it
                // further; too little: drop the high-leverage ones.
                let sign = if lambda > 0.0 { -1.0 } else { 1.0 };
                Box::new(move |i| sign * self.centered[i].dot(&v).powi(2))
            }
        };
        alive
            .max_by(|&a, &b| key(a).total_cmp(&key(b)).then(b.cmp(&a)))
            .expect("audit never deletes every point")
    }

    fn remove(&mut self, i: usize) {
        let c = &self.centered[i];
        self.sum -= c;
        self.second -= c * c.transpose();
        self.alive[i] = false;
        self.count -= 1;
    }
}
