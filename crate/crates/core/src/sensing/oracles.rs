//! Robust gradient and Hessian oracles built from corrupted samples.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use std::f64::consts::SQRT_2;

use super::objective::residual_and_bu;
use super::{FactorMatrix, ProblemSpec, SensingError, SensingSample};
use crate::robust_mean::{robust_mean_estimate, PointCloud};
use crate::sosp::Oracles;

/// Call and filter-round counters accumulated across oracle queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleStats {
    pub gradient_calls: usize,
    pub hessian_calls: usize,
    pub robust_rounds: usize,
}

/// Gradient and Hessian estimates obtained by running the robust mean
/// estimator over the per-sample derivatives at `4 eps`.
///
/// Holds the `n` clouds of vectorized derivatives only transiently; the
/// Hessian cloud is `n x k(k+1)/2` doubles with `k = d r` (upper triangle,
/// off-diagonal entries scaled by `sqrt 2` so the packing is an isometry).
pub struct RobustSensingOracles {
    sym: Vec<DMatrix<f64>>,
    ys: Vec<f64>,
    d: usize,
    r: usize,
    estimator_eps: f64,
    pub stats: OracleStats,
}

/// Builds robust oracles over `samples` for contamination fraction `eps`.
pub fn robust_oracles(
    samples: &[SensingSample],
    eps: f64,
    spec: &ProblemSpec,
) -> Result<RobustSensingOracles, SensingError> {
    RobustSensingOracles::new(samples, eps, spec)
}

impl RobustSensingOracles {
    pub fn new(
        samples: &[SensingSample],
        eps: f64,
        spec: &ProblemSpec,
    ) -> Result<Self, SensingError> {
        if samples.is_empty() {
            return Err(SensingError::EmptyInput);
        }
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != spec.d {
                return Err(SensingError::DimensionMismatch(format!(
                    "sample {i} is {}x{}, expected {}x{}",
                    s.a.nrows(),
                    s.a.ncols(),
                    spec.d,
                    spec.d
                )));
            }
        }
        let sym = samples.par_iter().map(|s| &s.a + s.a.transpose()).collect();
        Ok(Self {
            sym,
            ys: samples.iter().map(|s| s.y).collect(),
            d: spec.d,
            r: spec.r,
            estimator_eps: 4.0 * eps,
            stats: OracleStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    fn check_factor(&self, u: &FactorMatrix) -> Result<(), SensingError> {
        if u.d() != self.d || u.r() != self.r {
            return Err(SensingError::DimensionMismatch(format!(
                "factor is {}x{}, expected {}x{}",
                u.d(),
                u.r(),
                self.d,
                self.r
            )));
        }
        Ok(())
    }

    /// Robust estimate of the population gradient at `u`, as a `d x r` matrix.
    pub fn gradient_at(&mut self, u: &FactorMatrix) -> Result<DMatrix<f64>, SensingError> {
        self.check_factor(u)?;
        let dim = self.d * self.r;
        let mut rows = vec![0.0; self.len() * dim];
        rows.par_chunks_mut(dim)
            .zip(self.sym.par_iter().zip(self.ys.par_iter()))
            .for_each(|(row, (b, &y))| {
                let (res, bu) = residual_and_bu(&u.0, b, y);
                for (slot, v) in row.iter_mut().zip(bu.iter()) {
                    *slot = res * v;
                }
            });
        let est = self.estimate(rows, dim)?;
        self.stats.gradient_calls += 1;
        Ok(DMatrix::from_column_slice(self.d, self.r, est.as_slice()))
    }

    /// Robust estimate of the population Hessian at `u` over column-major
    /// `vec(U)`.
    ///
    /// Each sample Hessian enters the filter as its upper triangle with
    /// off-diagonal entries scaled by `sqrt(2)`. That map is an isometry of
    /// the symmetric matrices, so the filter sees the same geometry in
    /// `dim (dim + 1) / 2` coordinates instead of `dim^2`.
    pub fn hessian_at(&mut self, u: &FactorMatrix) -> Result<DMatrix<f64>, SensingError> {
        self.check_factor(u)?;
        let d = self.d;
        let dim = d * self.r;
        let width = dim * (dim + 1) / 2;
        let mut rows = vec![0.0; self.len() * width];
        rows.par_chunks_mut(width)
            .zip(self.sym.par_iter().zip(self.ys.par_iter()))
            .for_each(|(row, (b, &y))| {
                let (res, bu) = residual_and_bu(&u.0, b, y);
                let g = bu.as_slice();
                let mut slot = 0;
                for q in 0..dim {
                    for p in 0..=q {
                        let mut h = g[p] * g[q];
                        if p / d == q / d {
                            h += res * b[(p % d, q % d)];
                        }
                        row[slot] = if p == q { h } else { h * SQRT_2 };
                        slot += 1;
                    }
                }
            });
        let est = self.estimate(rows, width)?;
        self.stats.hessian_calls += 1;
        let mut h = DMatrix::zeros(dim, dim);
        let mut slot = 0;
        for q in 0..dim {
            for p in 0..=q {
                let v = if p == q { est[slot] } else { est[slot] / SQRT_2 };
                h[(p, q)] = v;
                h[(q, p)] = v;
                slot += 1;
            }
        }
        Ok(h)
    }

    fn estimate(&mut self, rows: Vec<f64>, width: usize) -> Result<DVector<f64>, SensingError> {
        // Row-major buffer of n points is the column-major layout of the k x n transpose.
        let n = self.len();
        let points = DMatrix::from_vec(width, n, rows).transpose();
        let cloud = PointCloud::from_matrix(points)?;
        let est = robust_mean_estimate(&cloud, self.estimator_eps)?;
        self.stats.robust_rounds += est.rounds;
        Ok(est.mean)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

impl Oracles for RobustSensingOracles {
    fn gradient(&mut self, x: &DVector<f64>) -> Result<DVector<f64>, String> {
        let u = FactorMatrix::from_vec(self.d, self.r, x.as_slice());
        let g = self.gradient_at(&u).map_err(|e| e.to_string())?;
        Ok(DVector::from_column_slice(g.as_slice()))
    }

    fn hessian(&mut self, x: &DVector<f64>) -> Result<DMatrix<f64>, String> {
        let u = FactorMatrix::from_vec(self.d, self.r, x.as_slice());
        self.hessian_at(&u).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{sample_gradient, sample_hessian};
    use approx::assert_relative_eq;

    fn spec(d: usize, r: usize) -> ProblemSpec {
        ProblemSpec {
            d,
            r,
            gamma: 36.0,
            sigma_r_star: 1.0,
            sigma: 0.0,
            eps: 0.05,
        }
    }

    #[test]
    fn identical_samples_give_exact_derivatives() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let s = SensingSample::new(a, 0.7).unwrap();
        let samples = vec![s.clone(); 50];
        let mut oracles = robust_oracles(&samples, 0.05, &spec(2, 1)).unwrap();
        let u = FactorMatrix(DMatrix::from_column_slice(2, 1, &[0.3, -0.8]));
        assert_eq!(oracles.gradient_at(&u).unwrap(), sample_gradient(&u, &s).unwrap());
        // Off-diagonal entries pass through a sqrt(2) scaling and back.
        assert_relative_eq!(
            oracles.hessian_at(&u).unwrap(),
            sample_hessian(&u, &s).unwrap(),
            max_relative = 1e-15
        );
        assert_eq!(oracles.stats.gradient_calls, 1);
        assert_eq!(oracles.stats.hessian_calls, 1);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(
            robust_oracles(&[], 0.05, &spec(2, 1)),
            Err(SensingError::EmptyInput)
        ));
        let s = SensingSample::new(DMatrix::zeros(3, 3), 0.0).unwrap();
        assert!(matches!(
            robust_oracles(&[s], 0.05, &spec(2, 1)),
            Err(SensingError::DimensionMismatch(_))
        ));
    }
}
