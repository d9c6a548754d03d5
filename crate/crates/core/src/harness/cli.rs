use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::{
    clean_samples_for, corrupt_for, ground_truth_for, recover_samples, run_experiment, sweep,
    write_sweep_csv, Dataset, ExperimentConfig, HarnessError, RunMeta,
};
use crate::sensing::{ProblemSpec, RecoveryOptions};

/// Worker thread count for parallel sections; 0 or unset means automatic.
pub const THREADS_ENV: &str = "ROBUST_SOSP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "robust-sosp", version, about = "Outlier-robust low-rank matrix sensing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a clean dataset drawn from the config's ground truth.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Apply the config's corruption strategy to a dataset.
    Corrupt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Recover the low-rank matrix from a dataset file.
    Recover {
        #[arg(long)]
        input: PathBuf,
        /// Rank; required when the file does not record it.
        #[arg(long)]
        rank: Option<usize>,
        /// Upper bound on the spectrum of the target.
        #[arg(long)]
        gamma: Option<f64>,
        /// Smallest nonzero singular value of the target.
        #[arg(long)]
        sigma_r_star: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// Noise level; defaults to the value in the file.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        iota: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trace.csv")]
        trace: PathBuf,
        #[arg(long, default_value = "summary.json")]
        summary: PathBuf,
    },
    /// Full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for outputs the config leaves unset.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Grid over eps and sigma, one summary row per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<f64>,
        #[arg(long, default_value = "sweep.csv")]
        output: PathBuf,
    },
}

/// Sizes the global rayon pool from [`THREADS_ENV`]. A pool that already
/// exists is left alone.
pub fn configure_threads() -> Result<(), HarnessError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
            HarnessError::ConfigInvalid(format!("{THREADS_ENV} must be a nonnegative integer, got {v:?}"))
        })?,
        _ => 0,
    };
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Entry point for the binary; `argv` includes the program name. Returns
/// the process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match configure_threads().and_then(|()| dispatch(parsed.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Generate { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let gt = ground_truth_for(&cfg)?;
            let samples = clean_samples_for(&cfg, &gt);
            ensure_parent(&output)?;
            Dataset {
                d: cfg.d,
                r: Some(cfg.r),
                sigma: cfg.sigma,
                samples,
            }
            .write(&output)?;
            println!("wrote {} samples to {}", cfg.n, output.display());
        }
        Command::Corrupt {
            config,
            input,
            output,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = Dataset::read(&input)?;
            if ds.d != cfg.d {
                return Err(HarnessError::ConfigInvalid(format!(
                    "{} has d = {} but the config has d = {}",
                    input.display(),
                    ds.d,
                    cfg.d
                )));
            }
            let gt = ground_truth_for(&cfg)?;
            let (samples, replaced) = corrupt_for(&cfg, &ds.samples, &gt)?;
            ensure_parent(&output)?;
            Dataset { samples, ..ds }.write(&output)?;
            println!("replaced {} samples, wrote {}", replaced.len(), output.display());
        }
        Command::Recover {
            input,
            rank,
            gamma,
            sigma_r_star,
            eps,
            sigma,
            iota,
            seed,
            trace,
            summary,
        } => {
            let ds = Dataset::read(&input)?;
            let missing = |flag: &str| HarnessError::ConfigInvalid(format!("--{flag} is required"));
            let r = rank
                .or(ds.r)
                .ok_or_else(|| missing("rank (the dataset does not record r)"))?;
            let spec = ProblemSpec {
                d: ds.d,
                r,
                gamma: gamma.ok_or_else(|| missing("gamma"))?,
                sigma_r_star: sigma_r_star.ok_or_else(|| missing("sigma-r-star"))?,
                sigma: sigma.unwrap_or(ds.sigma),
                eps: eps.ok_or_else(|| missing("eps"))?,
            };
            spec.validate()
                .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            let opts = RecoveryOptions {
                iota,
                ..RecoveryOptions::default()
            };
            let meta = RunMeta {
                n: ds.samples.len(),
                strategy: None,
                corrupted: None,
                seed,
                record_timings: false,
            };
            let report = recover_samples(&ds.samples, &spec, seed, &opts, None, &meta)?;
            ensure_parent(&trace)?;
            ensure_parent(&summary)?;
            report.write_csv(&trace)?;
            report.write_summary(&summary)?;
            println!(
                "{} branch, {} iterations; wrote {} and {}",
                report.summary.branch,
                report.rows.len() - 1,
                trace.display(),
                summary.display()
            );
        }
        Command::Run { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let out = &mut cfg.output;
            out.trace_csv.get_or_insert_with(|| out_dir.join("trace.csv"));
            out.summary_json.get_or_insert_with(|| out_dir.join("summary.json"));
            for p in [&out.trace_csv, &out.summary_json, &out.dataset].into_iter().flatten() {
                ensure_parent(p)?;
            }
            let report = run_experiment(&cfg)?;
            match report.summary.frob_error {
                Some(err) => println!("{} branch, frob_error = {err:e}", report.summary.branch),
                None => println!("{} branch", report.summary.branch),
            }
        }
        Command::Sweep {
            config,
            eps,
            sigma,
            output,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = sweep(&cfg, &eps, &sigma)?;
            ensure_parent(&output)?;
            write_sweep_csv(&rows, &output)?;
            println!("{} runs, wrote {}", rows.len(), output.display());
        }
    }
    Ok(())
}
