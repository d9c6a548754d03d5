//! Python module `robust_sosp_py`.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use robust_sosp::corruption::{self, CorruptionPlan, Strategy};
use robust_sosp::harness::{self, Dataset, ExperimentConfig, HarnessError};
use robust_sosp::robust_mean::{robust_mean_estimate, PointCloud};
use robust_sosp::sensing::{self, FactorMatrix, ProblemSpec, RecoveryOptions, SensingSample};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Io { .. } | HarnessError::ConfigRead { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(value_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Filtered robust mean of the rows of `points`.
///
/// Returns `(mean, rounds, weights)`.
#[pyfunction]
fn robust_mean(points: Vec<Vec<f64>>, eps: f64) -> PyResult<(Vec<f64>, usize, Vec<f64>)> {
    let cloud = PointCloud::from_rows(&points).map_err(value_err)?;
    let est = robust_mean_estimate(&cloud, eps).map_err(value_err)?;
    Ok((est.mean.iter().copied().collect(), est.rounds, est.weights.weights().to_vec()))
}

#[pyclass(name = "GroundTruth", module = "robust_sosp_py", frozen)]
struct PyGroundTruth {
    inner: corruption::GroundTruth,
}

#[pymethods]
impl PyGroundTruth {
    #[new]
    #[pyo3(signature = (d, r, spectrum, seed = 0))]
    fn new(d: usize, r: usize, spectrum: Vec<f64>, seed: u64) -> PyResult<Self> {
        let inner = corruption::generate_ground_truth(d, r, &spectrum, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn u_star(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.u_star.0)
    }

    #[getter]
    fn m_star(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.m_star)
    }

    #[getter]
    fn spectrum(&self) -> Vec<f64> {
        self.inner.spectrum.clone()
    }

    /// Clean measurements `y = <A, M*> + sigma z`.
    #[pyo3(signature = (n, sigma = 0.0, seed = 0))]
    fn sample(&self, n: usize, sigma: f64, seed: u64) -> PySensingData {
        PySensingData {
            samples: corruption::sample_clean(&self.inner, n, sigma, seed),
            sigma,
        }
    }
}

#[pyclass(name = "SensingData", module = "robust_sosp_py")]
struct PySensingData {
    samples: Vec<SensingSample>,
    sigma: f64,
}

#[pymethods]
impl PySensingData {
    #[new]
    #[pyo3(signature = (matrices, ys, sigma = 0.0))]
    fn new(matrices: Vec<Vec<Vec<f64>>>, ys: Vec<f64>, sigma: f64) -> PyResult<Self> {
        if matrices.len() != ys.len() {
            return Err(value_err("matrices and ys differ in length"));
        }
        let samples = matrices
            .iter()
            .zip(ys)
            .map(|(a, y)| SensingSample::new(from_rows(a)?, y).map_err(value_err))
            .collect::<PyResult<_>>()?;
        Ok(Self { samples, sigma })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ds = Dataset::read(&path).map_err(harness_err)?;
        Ok(Self {
            samples: ds.samples,
            sigma: ds.sigma,
        })
    }

    #[pyo3(signature = (path, r = None))]
    fn save(&self, path: PathBuf, r: Option<usize>) -> PyResult<()> {
        Dataset {
            d: self.samples.first().map_or(0, SensingSample::dim),
            r,
            sigma: self.sigma,
            samples: self.samples.clone(),
        }
        .write(&path)
        .map_err(harness_err)
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }

    #[getter]
    fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    fn matrix(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.samples
            .get(i)
            .map(|s| to_rows(&s.a))
            .ok_or_else(|| value_err(format!("index {i} out of range")))
    }

    /// Replaces `floor(eps n)` samples; returns the new data and the replaced
    /// positions. `strategy` is one of `none`, `random_replacement`,
    /// `large_outliers`, `counterexample`.
    #[pyo3(signature = (truth, strategy, eps, seed = 0))]
    fn corrupt(
        &self,
        truth: &PyGroundTruth,
        strategy: &str,
        eps: f64,
        seed: u64,
    ) -> PyResult<(PySensingData, Vec<usize>)> {
        let strategy: Strategy = strategy.parse().map_err(PyValueError::new_err)?;
        let plan = CorruptionPlan { strategy, eps, seed };
        let (samples, idx) =
            corruption::corrupt(&self.samples, &plan, &truth.inner).map_err(value_err)?;
        Ok((PySensingData { samples, sigma: self.sigma }, idx))
    }
}

#[pyclass(name = "Recovery", module = "robust_sosp_py", frozen)]
struct PyRecovery {
    inner: sensing::RecoveryResult,
}

#[pymethods]
impl PyRecovery {
    #[getter]
    fn branch(&self) -> &'static str {
        self.inner.branch.as_str()
    }

    #[getter]
    fn m_hat(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.m_hat)
    }

    #[getter]
    fn u(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.u_final.as_ref().map(|u| to_rows(&u.0))
    }

    #[getter]
    fn global_iters(&self) -> usize {
        self.inner.global.as_ref().map_or(0, |g| g.trace.iterations())
    }

    #[getter]
    fn refine_iters(&self) -> usize {
        self.inner.refine.as_ref().map_or(0, |r| r.records.len())
    }

    #[getter]
    fn robust_rounds(&self) -> usize {
        self.inner.robust_rounds()
    }

    fn frob_error(&self, truth: &PyGroundTruth) -> f64 {
        self.inner.frob_error(&truth.inner.m_star)
    }
}

/// Full recovery pipeline on `data`.
#[pyfunction]
#[pyo3(signature = (data, r, gamma, sigma_r_star, eps, sigma = None, seed = 0, iota = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn recover(
    py: Python<'_>,
    data: &PySensingData,
    r: usize,
    gamma: f64,
    sigma_r_star: f64,
    eps: f64,
    sigma: Option<f64>,
    seed: u64,
    iota: f64,
) -> PyResult<PyRecovery> {
    let spec = ProblemSpec {
        d: data.samples.first().map_or(0, SensingSample::dim),
        r,
        gamma,
        sigma_r_star,
        sigma: sigma.unwrap_or(data.sigma),
        eps,
    };
    let opts = RecoveryOptions {
        iota,
        ..RecoveryOptions::default()
    };
    let samples = &data.samples;
    let inner = py
        .detach(|| sensing::recover(samples, &spec, seed, &opts))
        .map_err(value_err)?;
    Ok(PyRecovery { inner })
}

/// `min_R ||U - U* R||_F` over orthogonal `R`.
#[pyfunction]
fn dist_to_solution_set(u: Vec<Vec<f64>>, u_star: Vec<Vec<f64>>) -> PyResult<f64> {
    let u = FactorMatrix(from_rows(&u)?);
    let u_star = FactorMatrix(from_rows(&u_star)?);
    sensing::dist_to_solution_set(&u, &u_star).map_err(value_err)
}

/// Population gradient `2 (U U^T - M*) U`.
#[pyfunction]
fn population_gradient(u: Vec<Vec<f64>>, m_star: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let g = sensing::population_gradient(&FactorMatrix(from_rows(&u)?), &from_rows(&m_star)?)
        .map_err(value_err)?;
    Ok(to_rows(&g))
}

/// Runs an experiment from a JSON config string; returns the summary JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(harness_err)?;
    let report = py.detach(|| harness::run_experiment(&cfg)).map_err(harness_err)?;
    Ok(report.summary_json())
}

/// Unweighted mean of the rows of `points`.
#[pyfunction]
fn plain_mean(points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let cloud = PointCloud::from_rows(&points).map_err(value_err)?;
    let m: DVector<f64> = cloud.plain_mean();
    Ok(m.iter().copied().collect())
}

#[pymodule]
fn robust_sosp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PySensingData>()?;
    m.add_class::<PyRecovery>()?;
    m.add_function(wrap_pyfunction!(robust_mean, m)?)?;
    m.add_function(wrap_pyfunction!(plain_mean, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add_function(wrap_pyfunction!(dist_to_solution_set, m)?)?;
    m.add_function(wrap_pyfunction!(population_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
