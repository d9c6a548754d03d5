//! Per-sample loss `f(U) = (<U U^T, A> - y)^2 / 2` and its closed-form
//! derivatives, plus the population quantities used as test oracles.

use nalgebra::DMatrix;

use super::{check_dims, FactorMatrix, SensingError, SensingSample};

/// `B U` and the residual `<U U^T, A> - y`, given `B = A + A^T`.
///
/// Uses `<U U^T, A> = <U, B U> / 2`.
pub(crate) fn residual_and_bu(u: &DMatrix<f64>, b: &DMatrix<f64>, y: f64) -> (f64, DMatrix<f64>) {
    let bu = b * u;
    (0.5 * u.dot(&bu) - y, bu)
}

/// Writes `res * (I_r (x) B) + vec(BU) vec(BU)^T` column-major into `out`.
pub(crate) fn write_hessian(b: &DMatrix<f64>, res: f64, bu: &DMatrix<f64>, out: &mut [f64]) {
    let d = b.nrows();
    let r = bu.ncols();
    let dim = d * r;
    let g = bu.as_slice();
    for q in 0..dim {
        let col = &mut out[q * dim..(q + 1) * dim];
        let gq = g[q];
        for (p, slot) in col.iter_mut().enumerate() {
            *slot = g[p] * gq;
        }
        let (blk, j) = (q / d, q % d);
        for i in 0..d {
            col[blk * d + i] += res * b[(i, j)];
        }
    }
}

pub fn sample_objective(u: &FactorMatrix, s: &SensingSample) -> Result<f64, SensingError> {
    check_dims(u, s)?;
    let inner = u.gram().dot(&s.a);
    Ok(0.5 * (inner - s.y).powi(2))
}

/// `||U U^T - M*||_F^2 / 2 + sigma^2 / 2`, the expected per-sample loss.
pub fn population_objective(
    u: &FactorMatrix,
    m_star: &DMatrix<f64>,
    sigma: f64,
) -> Result<f64, SensingError> {
    check_square(u, m_star)?;
    Ok(0.5 * (u.gram() - m_star).norm_squared() + 0.5 * sigma * sigma)
}

/// `(<U U^T, A> - y) (A + A^T) U`.
pub fn sample_gradient(u: &FactorMatrix, s: &SensingSample) -> Result<DMatrix<f64>, SensingError> {
    check_dims(u, s)?;
    let b = &s.a + s.a.transpose();
    let (res, bu) = residual_and_bu(&u.0, &b, s.y);
    Ok(bu * res)
}

/// Hessian of the sample loss with respect to column-major `vec(U)`:
/// `res * (I_r (x) B) + vec(B U) vec(B U)^T` with `B = A + A^T`.
pub fn sample_hessian(u: &FactorMatrix, s: &SensingSample) -> Result<DMatrix<f64>, SensingError> {
    check_dims(u, s)?;
    let b = &s.a + s.a.transpose();
    let (res, bu) = residual_and_bu(&u.0, &b, s.y);
    let dim = u.d() * u.r();
    let mut h = DMatrix::zeros(dim, dim);
    write_hessian(&b, res, &bu, h.as_mut_slice());
    Ok(h)
}

/// `2 (U U^T - M*) U`, the expected sample gradient.
pub fn population_gradient(
    u: &FactorMatrix,
    m_star: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SensingError> {
    check_square(u, m_star)?;
    Ok((u.gram() - m_star) * &u.0 * 2.0)
}

/// Bound on `||Cov(vec grad f_i(U))||_op`.
///
/// Noiseless: `8 ||U U^T - M*||_F^2 ||U||_op^2`.
/// Noisy: `4 (||U U^T - M*||_F^2 + sigma^2) ||U||_op^2`.
pub fn covariance_bound_gradient(
    u: &FactorMatrix,
    m_star: &DMatrix<f64>,
    sigma: f64,
) -> Result<f64, SensingError> {
    check_square(u, m_star)?;
    let gap = (u.gram() - m_star).norm_squared();
    let op2 = u.op_norm().powi(2);
    Ok(if sigma == 0.0 {
        8.0 * gap * op2
    } else {
        4.0 * (gap + sigma * sigma) * op2
    })
}

/// Bound on `||Cov(vec H_i(U))||_op`:
/// `16 r (||U U^T - M*||_F^2 + sigma^2) + 128 ||U||_op^4`.
pub fn covariance_bound_hessian(
    u: &FactorMatrix,
    m_star: &DMatrix<f64>,
    sigma: f64,
) -> Result<f64, SensingError> {
    check_square(u, m_star)?;
    let gap = (u.gram() - m_star).norm_squared();
    let r = u.r() as f64;
    Ok(16.0 * r * (gap + sigma * sigma) + 128.0 * u.op_norm().powi(4))
}

fn check_square(u: &FactorMatrix, m: &DMatrix<f64>) -> Result<(), SensingError> {
    if m.nrows() != u.d() || m.ncols() != u.d() {
        return Err(SensingError::DimensionMismatch(format!(
            "factor has {} rows but target is {}x{}",
            u.d(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}
