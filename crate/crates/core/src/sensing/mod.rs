//! Outlier-robust low-rank matrix sensing.
//!
//! Measurements are `y = <A, M*> + noise` with Gaussian `A`, and `M* = U* U*^T`
//! has rank `r`. Recovery works on the factor `U` directly: a global phase
//! finds an approximate second-order stationary point of the population loss
//! from robust gradient and Hessian estimates, then robust gradient descent
//! refines it. Very noisy instances instead use a single robust estimate of
//! `E[y A]` followed by rank-`r` truncation.

mod objective;
mod oracles;
mod recovery;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::op_norm;
use crate::robust_mean::RobustMeanError;
use crate::sosp::SolverError;

pub use objective::{
    covariance_bound_gradient, covariance_bound_hessian, population_gradient, population_objective,
    sample_gradient, sample_hessian, sample_objective,
};
pub use oracles::{robust_oracles, OracleStats, RobustSensingOracles};
pub use recovery::{
    dist_to_solution_set, local_refine, recover, refine_max_iters, refine_step_size,
    refine_threshold, solve_global, spectral_recover, Branch, GlobalOutcome, RecoveryOptions, RecoveryResult, RefineOutcome, RefineRecord, RefineStop,
    SpectralOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no samples")]
    EmptyInput,
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("{phase} stopped at its iteration cap of {iters}")]
    IterCap { phase: &'static str, iters: usize },
    #[error(transparent)]
    RobustMean(#[from] RobustMeanError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// One measurement `(A, y)` with `A` a `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSample {
    pub a: DMatrix<f64>,
    pub y: f64,
}

impl SensingSample {
    pub fn new(a: DMatrix<f64>, y: f64) -> Result<Self, SensingError> {
        if !a.is_square() {
            return Err(SensingError::DimensionMismatch(format!(
                "measurement matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !y.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(SensingError::InvalidSpec("sample has non-finite entries".into()));
        }
        Ok(Self { a, y })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// The `d x r` factor `U` with `M = U U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix(pub DMatrix<f64>);

impl FactorMatrix {
    pub fn zeros(d: usize, r: usize) -> Self {
        Self(DMatrix::zeros(d, r))
    }

    /// Inverse of [`FactorMatrix::to_vec`]: column-major `vec(U)`.
    pub fn from_vec(d: usize, r: usize, v: &[f64]) -> Self {
        Self(DMatrix::from_column_slice(d, r, v))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn r(&self) -> usize {
        self.0.ncols()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    pub fn op_norm(&self) -> f64 {
        op_norm(&self.0)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Known problem constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub d: usize,
    pub r: usize,
    /// Upper bound on the spectrum of `M*`; the region `||U||_op^2 <= gamma`
    /// contains every iterate of the global phase.
    pub gamma: f64,
    /// Smallest nonzero singular value of `M*`.
    pub sigma_r_star: f64,
    /// Measurement noise standard deviation.
    pub sigma: f64,
    /// Contamination fraction.
    pub eps: f64,
}

impl ProblemSpec {
    pub fn kappa(&self) -> f64 {
        self.gamma / self.sigma_r_star
    }

    /// Contamination parameter passed to every robust mean call.
    pub fn estimator_eps(&self) -> f64 {
        4.0 * self.eps
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        let bad = |msg: String| Err(SensingError::InvalidSpec(msg));
        if self.d == 0 || self.r == 0 || self.r > self.d {
            return bad(format!("need 1 <= r <= d, got d={}, r={}", self.d, self.r));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.sigma_r_star.is_finite() && self.sigma_r_star > 0.0) {
            return bad(format!("sigma_r_star must be positive, got {}", self.sigma_r_star));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("eps must lie in (0, 1/2), got {}", self.eps));
        }
        if self.estimator_eps() >= 0.5 {
            return bad(format!(
                "robust estimation runs at 4*eps = {}, which must stay below 1/2",
                self.estimator_eps()
            ));
        }
        Ok(())
    }
}

fn check_dims(u: &FactorMatrix, s: &SensingSample) -> Result<(), SensingError> {
    if s.a.nrows() != u.d() || s.a.ncols() != u.d() {
        return Err(SensingError::DimensionMismatch(format!(
            "factor has {} rows but measurement is {}x{}",
            u.d(),
            s.a.nrows(),
            s.a.ncols()
        )));
    }
    Ok(())
}
