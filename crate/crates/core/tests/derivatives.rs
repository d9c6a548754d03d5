use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robust_sosp::sensing::{
    sample_gradient, sample_hessian, sample_objective, FactorMatrix, SensingSample,
};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn instance(seed: u64) -> (FactorMatrix, SensingSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=5);
    let r = rng.random_range(1..=3.min(d));
    let u = FactorMatrix(gaussian(&mut rng, d, r));
    let a = gaussian(&mut rng, d, d);
    let y = rng.sample::<f64, _>(StandardNormal) * 2.0;
    (u, SensingSample::new(a, y).unwrap())
}

fn f_at(u: &FactorMatrix, s: &SensingSample, v: &[f64]) -> f64 {
    sample_objective(&FactorMatrix::from_vec(u.d(), u.r(), v), s).unwrap()
}

fn fd_gradient(u: &FactorMatrix, s: &SensingSample, h: f64) -> Vec<f64> {
    let x = u.to_vec();
    (0..x.len())
        .map(|i| {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            (f_at(u, s, &p) - f_at(u, s, &m)) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian(u: &FactorMatrix, s: &SensingSample, h: f64) -> DMatrix<f64> {
    let x = u.to_vec();
    let k = x.len();
    DMatrix::from_fn(k, k, |i, j| {
        let eval = |si: f64, sj: f64| {
            let mut v = x.clone();
            v[i] += si * h;
            v[j] += sj * h;
            f_at(u, s, &v)
        };
        (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h)
    })
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1.0)
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..50 {
        let (u, s) = instance(seed);
        let g = sample_gradient(&u, &s).unwrap();
        let fd = fd_gradient(&u, &s, 1e-5);
        let err = rel(g.as_slice(), &fd);
        assert!(err <= 1e-5, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn hessian_matches_central_differences() {
    for seed in 0..50 {
        let (u, s) = instance(seed);
        let h = sample_hessian(&u, &s).unwrap();
        let fd = fd_hessian(&u, &s, 1e-4);
        let err = rel(h.as_slice(), fd.as_slice());
        assert!(err <= 1e-5, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn hessian_is_symmetric() {
    for seed in 0..20 {
        let (u, s) = instance(seed);
        let h = sample_hessian(&u, &s).unwrap();
        assert!((&h - h.transpose()).amax() <= 1e-12 * h.amax().max(1.0));
    }
}

#[test]
fn gradient_vanishes_on_exact_fit() {
    // y = <U U^T, A> makes the residual, and so the gradient, zero.
    for seed in 0..10 {
        let (u, s) = instance(seed);
        let y = u.gram().dot(&s.a);
        let s = SensingSample::new(s.a, y).unwrap();
        assert!(sample_gradient(&u, &s).unwrap().amax() <= 1e-12);
        assert!(sample_objective(&u, &s).unwrap() <= 1e-24);
    }
}
