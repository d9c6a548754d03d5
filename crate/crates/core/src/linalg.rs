//! Small dense linear-algebra helpers shared by the estimators and solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dimension up to which the top eigenvector is taken from a full symmetric
/// eigendecomposition. Larger matrices use power iteration.
pub const FULL_EIGEN_MAX_DIM: usize = 256;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 1000;
const POWER_SEED: u64 = 0x005e_ed0f_e16e;

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenpair of a symmetric positive semidefinite matrix.
///
/// Uses the full decomposition for `k <= FULL_EIGEN_MAX_DIM` and a seeded
/// power iteration above that.
pub fn top_eigenpair_psd(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let k = m.nrows();
    if k <= FULL_EIGEN_MAX_DIM {
        let (values, vectors) = sym_eigen_sorted(m);
        (values[k - 1], vectors.column(k - 1).into_owned())
    } else {
        power_iteration(m)
    }
}

/// Power iteration from a fixed-seed Gaussian start vector.
pub fn power_iteration(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let k = m.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)));
    v /= v.norm();
    let mut lambda = v.dot(&(m * &v));
    for _ in 0..POWER_MAX_ITERS {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return (0.0, v);
        }
        let next = w / norm;
        let next_lambda = next.dot(&(m * &next));
        let delta = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        let converged = (next_lambda - lambda).abs() <= POWER_TOL * next_lambda.abs().max(1.0)
            && delta <= POWER_TOL.sqrt();
        lambda = next_lambda;
        if converged {
            break;
        }
    }
    (lambda, v)
}

/// Spectral norm of an arbitrary matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_sorted(m);
    values[0].abs().max(values[values.len() - 1].abs())
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sorted_eigen_is_ascending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0, 5.0]));
        let (values, vectors) = sym_eigen_sorted(&m);
        assert_eq!(values.as_slice(), &[-2.0, 3.0, 5.0]);
        assert_relative_eq!(vectors[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn power_iteration_matches_full_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(30, 12, |_, _| StandardNormal.sample(&mut rng));
        let m: DMatrix<f64> = x.transpose() * &x;
        let (full, _) = top_eigenpair_psd(&m);
        let (power, v) = power_iteration(&m);
        assert_relative_eq!(full, power, max_relative = 1e-7);
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn op_norm_of_rank_one() {
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let m = &u * u.transpose();
        assert_relative_eq!(op_norm(&m), 25.0, max_relative = 1e-12);
        assert_relative_eq!(sym_op_norm(&m), 25.0, max_relative = 1e-12);
    }
}
