//! Randomized nonconvex minimization with inexact gradient and Hessian
//! oracles.
//!
//! Each iteration queries the gradient oracle. A large gradient triggers a
//! step of length `1/L_g` along it. Otherwise the Hessian oracle is queried
//! and, if its smallest eigenvalue is below `-eps_H`, the iterate moves by
//! `2 eps_H / L_H` along the matching eigenvector with a random sign. When
//! neither happens the iterate is returned as an approximate second-order
//! stationary point.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{all_finite, asymmetry, sym_eigen_sorted, symmetrize};

/// Largest tolerated `|H - H^T|` entry, relative to `max(1, max|H|)`, before
/// the Hessian is rejected instead of symmetrized.
pub const HESSIAN_ASYMMETRY_TOL: f64 = 1e-8;

/// Iteration cap used when no bound on `f(x0) - f*` is available.
pub const FALLBACK_MAX_ITERS: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("oracle failure at iteration {iter}: {reason}")]
    OracleFailure { iter: usize, reason: String },
    #[error("iterate left the admissible region at iteration {iter}: {reason}")]
    RegionViolation { iter: usize, reason: String },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Inexact first- and second-order information about the objective.
///
/// Implementations may be stochastic; the solver only requires that the
/// returned values are finite and that `hessian` is symmetric up to
/// [`HESSIAN_ASYMMETRY_TOL`].
pub trait Oracles {
    fn gradient(&mut self, x: &DVector<f64>) -> Result<DVector<f64>, String>;
    fn hessian(&mut self, x: &DVector<f64>) -> Result<DMatrix<f64>, String>;
}

/// Oracles backed by a pair of closures.
pub struct FnOracles<G, H> {
    pub grad: G,
    pub hess: H,
}

impl<G, H> Oracles for FnOracles<G, H>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
    H: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    fn gradient(&mut self, x: &DVector<f64>) -> Result<DVector<f64>, String> {
        Ok((self.grad)(x))
    }

    fn hessian(&mut self, x: &DVector<f64>) -> Result<DMatrix<f64>, String> {
        Ok((self.hess)(x))
    }
}

/// Returns `Err(reason)` when an iterate leaves the caller's region.
pub type RegionCheck = Arc<dyn Fn(&DVector<f64>) -> Result<(), String> + Send + Sync>;

#[derive(Clone)]
pub struct SolverParams {
    pub eps_g: f64,
    pub eps_h: f64,
    pub lip_g: f64,
    pub lip_h: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub region_check: Option<RegionCheck>,
}

impl fmt::Debug for SolverParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverParams")
            .field("eps_g", &self.eps_g)
            .field("eps_h", &self.eps_h)
            .field("lip_g", &self.lip_g)
            .field("lip_h", &self.lip_h)
            .field("max_iters", &self.max_iters)
            .field("seed", &self.seed)
            .field("region_check", &self.region_check.is_some())
            .finish()
    }
}

impl SolverParams {
    pub fn new(eps_g: f64, eps_h: f64, lip_g: f64, lip_h: f64, seed: u64) -> Self {
        Self {
            eps_g,
            eps_h,
            lip_g,
            lip_h,
            max_iters: FALLBACK_MAX_ITERS,
            seed,
            region_check: None,
        }
    }

    pub fn with_region(mut self, check: RegionCheck) -> Self {
        self.region_check = Some(check);
        self
    }

    pub fn with_max_iters(mut self, max_iters: u64) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// Guaranteed per-iteration decrease `min(eps_g^2 / (6 L_g), 2 eps_H^3 / (9 L_H^2))`.
    pub fn decrease_per_step(&self) -> f64 {
        (self.eps_g.powi(2) / (6.0 * self.lip_g))
            .min(2.0 * self.eps_h.powi(3) / (9.0 * self.lip_h.powi(2)))
    }

    /// `ceil(50 * f_range / C_eps)`, or [`FALLBACK_MAX_ITERS`] without a range.
    pub fn default_max_iters(&self, f_range: Option<f64>) -> u64 {
        match f_range {
            Some(range) if range.is_finite() && range > 0.0 => {
                let iters = (50.0 * range / self.decrease_per_step()).ceil();
                if iters >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    (iters as u64).max(1)
                }
            }
            _ => FALLBACK_MAX_ITERS,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("eps_g", self.eps_g),
            ("eps_h", self.eps_h),
            ("lip_g", self.lip_g),
            ("lip_h", self.lip_h),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SolverError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidParams("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Gradient,
    Curvature,
    /// Final check that certified the point.
    Stop,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Gradient => "gradient",
            StepKind::Curvature => "curvature",
            StepKind::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iter: usize,
    pub kind: StepKind,
    /// The iterate at which the oracles were queried.
    pub x: DVector<f64>,
    pub grad_norm: f64,
    pub min_eig: Option<f64>,
    /// Sign drawn for a curvature step.
    pub sign: Option<f64>,
    /// Wall-clock milliseconds since the solve started.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Sosp,
    IterCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<StepRecord>,
    pub terminal: DVector<f64>,
    pub reason: Termination,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Smallest eigenvalue of a symmetric matrix and a unit eigenvector for it.
pub fn min_eig_pair(h: &DMatrix<f64>) -> Result<(f64, DVector<f64>), SolverError> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(SolverError::DimensionMismatch {
            expected: h.nrows(),
            found: h.ncols(),
        });
    }
    if !all_finite(h.as_slice()) {
        return Err(SolverError::NonFinite);
    }
    let (values, vectors) = sym_eigen_sorted(h);
    let v = vectors.column(0).normalize();
    Ok((values[0], v))
}

fn checked_hessian(h: DMatrix<f64>, dim: usize, iter: usize) -> Result<DMatrix<f64>, SolverError> {
    let fail = |reason: String| SolverError::OracleFailure { iter, reason };
    if h.nrows() != dim || h.ncols() != dim {
        return Err(fail(format!(
            "hessian has shape {}x{}, expected {dim}x{dim}",
            h.nrows(),
            h.ncols()
        )));
    }
    if !all_finite(h.as_slice()) {
        return Err(fail("hessian has non-finite entries".into()));
    }
    let scale = h.amax().max(1.0);
    let skew = asymmetry(&h);
    if skew > HESSIAN_ASYMMETRY_TOL * scale {
        return Err(fail(format!("hessian asymmetry {skew:e} exceeds tolerance")));
    }
    Ok(symmetrize(&h))
}

/// Runs the randomized inexact-oracle method from `x0` until it certifies an
/// approximate second-order stationary point or hits `params.max_iters`.
pub fn find_sosp<O: Oracles + ?Sized>(
    x0: &DVector<f64>,
    oracles: &mut O,
    params: &SolverParams,
) -> Result<SolveTrace, SolverError> {
    params.validate()?;
    if !all_finite(x0.as_slice()) {
        return Err(SolverError::NonFinite);
    }
    let dim = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut x = x0.clone();
    let mut records = Vec::new();
    let start = Instant::now();

    for iter in 0..params.max_iters as usize {
        if let Some(check) = &params.region_check {
            check(&x).map_err(|reason| SolverError::RegionViolation { iter, reason })?;
        }
        let g = oracles
            .gradient(&x)
            .map_err(|reason| SolverError::OracleFailure { iter, reason })?;
        if g.len() != dim || !all_finite(g.as_slice()) {
            return Err(SolverError::OracleFailure {
                iter,
                reason: "gradient has wrong length or non-finite entries".into(),
            });
        }
        let grad_norm = g.norm();
        if grad_norm > params.eps_g {
            records.push(StepRecord {
                iter,
                kind: StepKind::Gradient,
                x: x.clone(),
                grad_norm,
                min_eig: None,
                sign: None,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            x.axpy(-1.0 / params.lip_g, &g, 1.0);
            continue;
        }

        let h = oracles
            .hessian(&x)
            .map_err(|reason| SolverError::OracleFailure { iter, reason })?;
        let h = checked_hessian(h, dim, iter)?;
        let (lambda, p) = min_eig_pair(&h)?;
        if lambda < -params.eps_h {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            records.push(StepRecord {
                iter,
                kind: StepKind::Curvature,
                x: x.clone(),
                grad_norm,
                min_eig: Some(lambda),
                sign: Some(sign),
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            x.axpy(2.0 * params.eps_h / params.lip_h * sign, &p, 1.0);
        } else {
            records.push(StepRecord {
                iter,
                kind: StepKind::Stop,
                x: x.clone(),
                grad_norm,
                min_eig: Some(lambda),
                sign: None,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            return Ok(SolveTrace {
                records,
                terminal: x,
                reason: Termination::Sosp,
            });
        }
    }

    if let Some(check) = &params.region_check {
        let iter = records.len();
        check(&x).map_err(|reason| SolverError::RegionViolation { iter, reason })?;
    }
    Ok(SolveTrace {
        records,
        terminal: x,
        reason: Termination::IterCap,
    })
}
