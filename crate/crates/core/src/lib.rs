//! Outlier-robust second-order nonconvex optimization.
//!
//! A filter-based robust mean estimator turns corrupted per-sample
//! gradients and Hessians into inexact oracles, and a randomized solver uses
//! them to find approximate second-order stationary points. The
//! [`sensing`] module applies this to low-rank matrix sensing with a
//! corrupted fraction of measurements.
//!
//! ```no_run
//! use robust_sosp::corruption::{corrupt, generate_ground_truth, sample_clean, CorruptionPlan, Strategy};
//! use robust_sosp::sensing::{recover, ProblemSpec, RecoveryOptions};
//!
//! let gt = generate_ground_truth(10, 1, &[1.0], 0).unwrap();
//! let clean = sample_clean(&gt, 4000, 0.0, 1);
//! let plan = CorruptionPlan { strategy: Strategy::Counterexample, eps: 0.05, seed: 2 };
//! let (samples, _) = corrupt(&clean, &plan, &gt).unwrap();
//! let spec = ProblemSpec { d: 10, r: 1, gamma: 36.0, sigma_r_star: 1.0, sigma: 0.0, eps: 0.05 };
//! let result = recover(&samples, &spec, 3, &RecoveryOptions::default()).unwrap();
//! assert!(result.frob_error(&gt.m_star) < 1e-5);
//! ```

pub mod corruption;
pub mod harness;
pub mod linalg;
pub mod robust_mean;
pub mod sensing;
pub mod sosp;
