//! Experiment pipeline and command-line interface:
//! generate, corrupt, recover, report.

mod cli;
mod config;
mod dataset;
mod report;

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{
    corrupt, derive_seed, generate_ground_truth, sample_clean, CorruptionError, GroundTruth,
};
use crate::sensing::{recover, ProblemSpec, RecoveryOptions, SensingError, SensingSample};

pub use cli::{cli, configure_threads, THREADS_ENV};
pub use config::{ExperimentConfig, OutputPaths};
pub use dataset::{Dataset, MAGIC};
pub use report::{build_report, RunMeta, RunReport, Summary, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("cannot read config {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{phase}: {source}")]
    Corruption {
        phase: &'static str,
        source: CorruptionError,
    },
    #[error("{phase}: {source}")]
    Sensing {
        phase: &'static str,
        source: SensingError,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) | HarnessError::ConfigRead { .. } => 1,
            _ => 2,
        }
    }
}

/// Independent seed streams derived from the single config seed.
pub mod streams {
    pub const GROUND_TRUTH: u64 = 10;
    pub const SAMPLES: u64 = 11;
    pub const CORRUPTION: u64 = 12;
    pub const SOLVER: u64 = 13;
}

/// Ground truth for a config.
pub fn ground_truth_for(cfg: &ExperimentConfig) -> Result<GroundTruth, HarnessError> {
    generate_ground_truth(
        cfg.d,
        cfg.r,
        &cfg.spectrum,
        derive_seed(cfg.seed, streams::GROUND_TRUTH),
    )
    .map_err(|source| HarnessError::Corruption {
        phase: "generate",
        source,
    })
}

/// Clean samples for a config.
pub fn clean_samples_for(cfg: &ExperimentConfig, gt: &GroundTruth) -> Vec<SensingSample> {
    sample_clean(gt, cfg.n, cfg.sigma, derive_seed(cfg.seed, streams::SAMPLES))
}

/// Applies the config's corruption strategy; returns the samples and the
/// replaced positions.
pub fn corrupt_for(
    cfg: &ExperimentConfig,
    samples: &[SensingSample],
    gt: &GroundTruth,
) -> Result<(Vec<SensingSample>, Vec<usize>), HarnessError> {
    let mut plan = cfg.corruption_plan();
    plan.seed = derive_seed(cfg.seed, streams::CORRUPTION);
    corrupt(samples, &plan, gt).map_err(|source| HarnessError::Corruption {
        phase: "corrupt",
        source,
    })
}

/// Recovery from arbitrary samples; `truth` enables error columns.
pub fn recover_samples(
    samples: &[SensingSample],
    spec: &ProblemSpec,
    seed: u64,
    opts: &RecoveryOptions,
    truth: Option<&GroundTruth>,
    meta: &RunMeta,
) -> Result<RunReport, HarnessError> {
    let result = recover(samples, spec, derive_seed(seed, streams::SOLVER), opts).map_err(
        |source| HarnessError::Sensing {
            phase: "recover",
            source,
        },
    )?;
    Ok(build_report(&result, spec, truth, meta))
}

/// generate, corrupt and recover, writing every output path that is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let gt = ground_truth_for(cfg)?;
    let clean = clean_samples_for(cfg, &gt);
    let (samples, replaced) = corrupt_for(cfg, &clean, &gt)?;
    drop(clean);
    if let Some(path) = &cfg.output.dataset {
        Dataset {
            d: cfg.d,
            r: Some(cfg.r),
            sigma: cfg.sigma,
            samples: samples.clone(),
        }
        .write(path)?;
    }
    let meta = RunMeta {
        n: cfg.n,
        strategy: Some(cfg.strategy.as_str().to_string()),
        corrupted: Some(replaced.len()),
        seed: cfg.seed,
        record_timings: cfg.record_timings,
    };
    let report = recover_samples(
        &samples,
        &cfg.problem_spec(),
        cfg.seed,
        &cfg.recovery_options(),
        Some(&gt),
        &meta,
    )?;
    if let Some(path) = &cfg.output.trace_csv {
        report.write_csv(path)?;
    }
    if let Some(path) = &cfg.output.summary_json {
        report.write_summary(path)?;
    }
    Ok(report)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub sigma: f64,
    pub seed: u64,
    pub branch: String,
    pub frob_error: Option<f64>,
    pub global_iters: usize,
    pub refine_iters: usize,
    pub robust_rounds: usize,
}

/// Runs the config at every `(eps, sigma)` pair, eps-major. Empty lists
/// keep the config's own value. Per-run output paths are ignored.
pub fn sweep(
    base: &ExperimentConfig,
    eps: &[f64],
    sigma: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    let eps = if eps.is_empty() { vec![base.eps] } else { eps.to_vec() };
    let sigma = if sigma.is_empty() { vec![base.sigma] } else { sigma.to_vec() };
    let mut grid = Vec::with_capacity(eps.len() * sigma.len());
    for &e in &eps {
        for &s in &sigma {
            let mut cfg = base.clone();
            cfg.eps = e;
            cfg.sigma = s;
            cfg.output = OutputPaths::default();
            cfg.validate()?;
            grid.push(cfg);
        }
    }
    grid.iter()
        .map(|cfg| {
            let report = run_experiment(cfg)?;
            let s = report.summary;
            Ok(SweepRow {
                eps: s.eps,
                sigma: s.sigma,
                seed: s.seed,
                branch: s.branch,
                frob_error: s.frob_error,
                global_iters: s.global_iters,
                refine_iters: s.refine_iters,
                robust_rounds: s.robust_rounds,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::io(path, e.into()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::io(path, e.into_error()))?;
    report::write_file(path, &bytes)
}
