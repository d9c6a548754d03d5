//! Global phase, local refinement, spectral fallback and the full recovery
//! pipeline.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use super::oracles::{OracleStats, RobustSensingOracles};
use super::{FactorMatrix, ProblemSpec, SensingError, SensingSample};
use crate::linalg::op_norm;
use crate::robust_mean::{robust_mean_estimate, PointCloud};
use crate::sosp::{find_sosp, SolveTrace, SolverParams, Termination};

/// Knobs of the recovery pipeline that are not problem constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOptions {
    /// Starting factor of the global phase; zero when absent.
    pub u0: Option<FactorMatrix>,
    /// Target Frobenius distance to the solution set for refinement.
    pub iota: f64,
    /// Overrides the global phase's derived iteration cap.
    pub max_global_iters: Option<u64>,
    /// Overrides the refinement iteration cap.
    pub max_refine_iters: Option<usize>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            u0: None,
            iota: 1e-6,
            max_global_iters: None,
            max_refine_iters: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalOutcome {
    pub u: FactorMatrix,
    pub trace: SolveTrace,
    pub stats: OracleStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRecord {
    pub iter: usize,
    pub u: FactorMatrix,
    pub grad_norm: f64,
    /// Wall-clock milliseconds since refinement started.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStop {
    /// Robust gradient norm fell to the stopping threshold.
    Converged,
    /// Iteration budget exhausted (only returned for noisy problems).
    IterCap,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub u: FactorMatrix,
    pub records: Vec<RefineRecord>,
    pub stop: RefineStop,
    pub step_size: f64,
    pub threshold: f64,
    pub stats: OracleStats,
}

#[derive(Debug, Clone)]
pub struct SpectralOutcome {
    pub m_hat: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub robust_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Global SOSP phase followed by local refinement.
    Factored,
    /// One robust estimate of `E[y A]` and rank-`r` truncation.
    Spectral,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Factored => "factored",
            Branch::Spectral => "spectral",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub branch: Branch,
    pub m_hat: DMatrix<f64>,
    pub u_final: Option<FactorMatrix>,
    pub global: Option<GlobalOutcome>,
    pub refine: Option<RefineOutcome>,
    pub spectral: Option<SpectralOutcome>,
    /// Wall-clock time per phase, in pipeline order.
    pub timings: Vec<(&'static str, Duration)>,
}

impl RecoveryResult {
    pub fn frob_error(&self, m_star: &DMatrix<f64>) -> f64 {
        (&self.m_hat - m_star).norm()
    }

    pub fn robust_rounds(&self) -> usize {
        self.global.as_ref().map_or(0, |g| g.stats.robust_rounds)
            + self.refine.as_ref().map_or(0, |r| r.stats.robust_rounds)
            + self.spectral.as_ref().map_or(0, |s| s.robust_rounds)
    }
}

fn check_samples(samples: &[SensingSample], spec: &ProblemSpec) -> Result<(), SensingError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(SensingError::EmptyInput);
    }
    Ok(())
}

/// Solver thresholds and Lipschitz constants for the global phase:
/// `eps_g = sigma_r^{3/2} / 32`, `eps_H = sigma_r / 4`, `L_g = 16 gamma`,
/// `L_H = 24 sqrt(gamma)`.
pub(crate) fn global_params(spec: &ProblemSpec, seed: u64) -> SolverParams {
    SolverParams::new(
        spec.sigma_r_star.powf(1.5) / 32.0,
        spec.sigma_r_star / 4.0,
        16.0 * spec.gamma,
        24.0 * spec.gamma.sqrt(),
        seed,
    )
}

/// Finds an approximate second-order stationary point of the population
/// loss from robust oracles, asserting `||U_t||_op^2 <= gamma` at every
/// iterate.
pub fn solve_global(
    samples: &[SensingSample],
    spec: &ProblemSpec,
    seed: u64,
    opts: &RecoveryOptions,
) -> Result<GlobalOutcome, SensingError> {
    check_samples(samples, spec)?;
    let u0 = opts
        .u0
        .clone()
        .unwrap_or_else(|| FactorMatrix::zeros(spec.d, spec.r));
    if u0.d() != spec.d || u0.r() != spec.r {
        return Err(SensingError::DimensionMismatch(format!(
            "initial factor is {}x{}, expected {}x{}",
            u0.d(),
            u0.r(),
            spec.d,
            spec.r
        )));
    }
    let mut oracles = RobustSensingOracles::new(samples, spec.eps, spec)?;

    let (d, r, gamma) = (spec.d, spec.r, spec.gamma);
    let region = Arc::new(move |x: &DVector<f64>| {
        let op2 = op_norm(&DMatrix::from_column_slice(d, r, x.as_slice())).powi(2);
        if op2 <= gamma {
            Ok(())
        } else {
            Err(format!("||U||_op^2 = {op2} exceeds gamma = {gamma}"))
        }
    });
    let mut params = global_params(spec, seed).with_region(region);
    // f(U0) <= (||U0 U0^T||_F + ||M*||_F)^2 / 2 with ||M*||_F <= sqrt(r) gamma.
    let f_range = 0.5 * (u0.gram().norm() + (spec.r as f64).sqrt() * spec.gamma).powi(2);
    params.max_iters = opts
        .max_global_iters
        .unwrap_or_else(|| params.default_max_iters(Some(f_range)));

    let x0 = DVector::from_column_slice(u0.0.as_slice());
    let trace = find_sosp(&x0, &mut oracles, &params)?;
    if trace.reason == Termination::IterCap {
        return Err(SensingError::IterCap {
            phase: "global",
            iters: trace.iterations(),
        });
    }
    Ok(GlobalOutcome {
        u: FactorMatrix::from_vec(spec.d, spec.r, trace.terminal.as_slice()),
        trace,
        stats: oracles.stats,
    })
}

/// Stopping threshold on the robust gradient norm for refinement:
/// `(sigma_r / (2 kappa)) * iota / sqrt(sigma_r)`.
pub fn refine_threshold(spec: &ProblemSpec, iota: f64) -> f64 {
    spec.sigma_r_star / (2.0 * spec.kappa()) * iota / spec.sigma_r_star.sqrt()
}

/// Step size `1/gamma` without noise, `1/(20 gamma)` with noise.
pub fn refine_step_size(spec: &ProblemSpec) -> f64 {
    if spec.sigma == 0.0 {
        1.0 / spec.gamma
    } else {
        1.0 / (20.0 * spec.gamma)
    }
}

/// Default refinement budget `10 * kappa' * max(1, ln(sigma_r / iota))`,
/// where `kappa' = 1 / (eta sigma_r)` accounts for the smaller noisy step.
pub fn refine_max_iters(spec: &ProblemSpec, iota: f64) -> usize {
    let kappa_step = 1.0 / (refine_step_size(spec) * spec.sigma_r_star);
    let logs = (spec.sigma_r_star / iota).ln().max(1.0);
    (10.0 * kappa_step * logs).ceil() as usize
}

/// Robust gradient descent from a point near the solution set.
///
/// Stops once the robust gradient norm is at most [`refine_threshold`].
/// Without noise, running out of iterations is an error; with noise the
/// budget is the expected stopping rule and the last iterate is returned.
pub fn local_refine(
    u0: &FactorMatrix,
    samples: &[SensingSample],
    spec: &ProblemSpec,
    iota: f64,
    max_iters: Option<usize>,
) -> Result<RefineOutcome, SensingError> {
    check_samples(samples, spec)?;
    if !(iota.is_finite() && iota > 0.0) {
        return Err(SensingError::InvalidSpec(format!("iota must be positive, got {iota}")));
    }
    let mut oracles = RobustSensingOracles::new(samples, spec.eps, spec)?;
    let eta = refine_step_size(spec);
    let threshold = refine_threshold(spec, iota);
    let cap = max_iters.unwrap_or_else(|| refine_max_iters(spec, iota)).max(1);

    let mut u = u0.clone();
    let mut records = Vec::new();
    let start = Instant::now();
    for iter in 0..cap {
        let g = oracles.gradient_at(&u)?;
        let grad_norm = g.norm();
        records.push(RefineRecord {
            iter,
            u: u.clone(),
            grad_norm,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if grad_norm <= threshold {
            return Ok(RefineOutcome {
                u,
                records,
                stop: RefineStop::Converged,
                step_size: eta,
                threshold,
                stats: oracles.stats,
            });
        }
        u.0 -= g * eta;
    }
    if spec.sigma == 0.0 {
        return Err(SensingError::IterCap {
            phase: "refine",
            iters: cap,
        });
    }
    Ok(RefineOutcome {
        u,
        records,
        stop: RefineStop::IterCap,
        step_size: eta,
        threshold,
        stats: oracles.stats,
    })
}

/// Rank-`r` truncation of a robust estimate of `E[y A] = M*`.
pub fn spectral_recover(
    samples: &[SensingSample],
    eps: f64,
    r: usize,
) -> Result<SpectralOutcome, SensingError> {
    let first = samples.first().ok_or(SensingError::EmptyInput)?;
    let d = first.dim();
    if r == 0 || r > d {
        return Err(SensingError::InvalidSpec(format!("need 1 <= r <= d, got r={r}, d={d}")));
    }
    let width = d * d;
    let mut rows = Vec::with_capacity(samples.len() * width);
    for (i, s) in samples.iter().enumerate() {
        if s.dim() != d {
            return Err(SensingError::DimensionMismatch(format!(
                "sample {i} is {}x{}, expected {d}x{d}",
                s.a.nrows(),
                s.a.ncols()
            )));
        }
        rows.extend(s.a.iter().map(|v| s.y * v));
    }
    let points = DMatrix::from_vec(width, samples.len(), rows).transpose();
    let est = robust_mean_estimate(&PointCloud::from_matrix(points)?, 4.0 * eps)?;
    let m_tilde = DMatrix::from_column_slice(d, d, est.mean.as_slice());

    let svd = m_tilde.svd(true, true);
    let (uu, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut m_hat = DMatrix::zeros(d, d);
    for &i in order.iter().take(r) {
        m_hat += uu.column(i) * vt.row(i) * svd.singular_values[i];
    }
    let singular_values = DVector::from_iterator(d, order.iter().map(|&i| svd.singular_values[i]));
    Ok(SpectralOutcome {
        m_hat,
        singular_values,
        robust_rounds: est.rounds,
    })
}

/// Full pipeline. Noise at or above `r * gamma` selects the spectral
/// estimator; otherwise the global phase is followed by refinement.
pub fn recover(
    samples: &[SensingSample],
    spec: &ProblemSpec,
    seed: u64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult, SensingError> {
    check_samples(samples, spec)?;
    if spec.sigma >= spec.r as f64 * spec.gamma {
        let start = Instant::now();
        let spectral = spectral_recover(samples, spec.eps, spec.r)?;
        return Ok(RecoveryResult {
            branch: Branch::Spectral,
            m_hat: spectral.m_hat.clone(),
            u_final: None,
            global: None,
            refine: None,
            spectral: Some(spectral),
            timings: vec![("spectral", start.elapsed())],
        });
    }

    let start = Instant::now();
    let global = solve_global(samples, spec, seed, opts)?;
    let global_time = start.elapsed();
    let start = Instant::now();
    let refine = local_refine(&global.u, samples, spec, opts.iota, opts.max_refine_iters)?;
    let refine_time = start.elapsed();
    Ok(RecoveryResult {
        branch: Branch::Factored,
        m_hat: refine.u.gram(),
        u_final: Some(refine.u.clone()),
        global: Some(global),
        refine: Some(refine),
        spectral: None,
        timings: vec![("global", global_time), ("refine", refine_time)],
    })
}

/// `min_R ||U - U* R||_F` over orthogonal `R`, attained at `R = V W^T` for
/// the SVD `U*^T U = V S W^T`.
pub fn dist_to_solution_set(u: &FactorMatrix, u_star: &FactorMatrix) -> Result<f64, SensingError> {
    if u.d() != u_star.d() || u.r() != u_star.r() {
        return Err(SensingError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            u.d(),
            u.r(),
            u_star.d(),
            u_star.r()
        )));
    }
    let cross = u_star.0.transpose() * &u.0;
    let svd = cross.svd(true, true);
    let rot = svd.u.expect("requested") * svd.v_t.expect("requested");
    Ok((&u.0 - &u_star.0 * rot).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn procrustes_examples() {
        let u_star = FactorMatrix(DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 2.0, 0.3, 0.1]));
        assert!(dist_to_solution_set(&u_star, &u_star).unwrap() < 1e-12);

        let (c, s) = (0.6_f64, 0.8_f64);
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let rotated = FactorMatrix(&u_star.0 * rot);
        assert!(dist_to_solution_set(&rotated, &u_star).unwrap() < 1e-12);

        let u = FactorMatrix(DMatrix::from_column_slice(2, 1, &[0.6, 0.8]));
        let doubled = FactorMatrix(&u.0 * 2.0);
        assert_relative_eq!(dist_to_solution_set(&doubled, &u).unwrap(), 1.0, epsilon = 1e-12);
        let flipped = FactorMatrix(&u.0 * -2.0);
        assert_relative_eq!(dist_to_solution_set(&flipped, &u).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_recovers_identical_rank_one_products() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = &v * v.transpose();
        // y A = m for every sample.
        let samples = vec![SensingSample::new(&m * 0.5, 2.0).unwrap(); 40];
        let out = spectral_recover(&samples, 0.05, 1).unwrap();
        assert_relative_eq!(out.m_hat, m, epsilon = 1e-12);
        assert!(out.singular_values[1] <= 1e-10 * out.singular_values[0]);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let spec = ProblemSpec {
            d: 3,
            r: 1,
            gamma: 36.0,
            sigma_r_star: 1.0,
            sigma: 0.0,
            eps: 0.05,
        };
        assert!(matches!(
            solve_global(&[], &spec, 0, &RecoveryOptions::default()),
            Err(SensingError::EmptyInput)
        ));
        assert!(matches!(spectral_recover(&[], 0.05, 1), Err(SensingError::EmptyInput)));
    }

    #[test]
    fn refine_constants() {
        let mut spec = ProblemSpec {
            d: 10,
            r: 1,
            gamma: 36.0,
            sigma_r_star: 1.0,
            sigma: 0.0,
            eps: 0.05,
        };
        assert_relative_eq!(refine_threshold(&spec, 1e-6), 1e-6 / 72.0);
        assert_relative_eq!(refine_step_size(&spec), 1.0 / 36.0);
        spec.sigma = 0.1;
        assert_relative_eq!(refine_step_size(&spec), 1.0 / 720.0);
    }
}
