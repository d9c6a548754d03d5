//! Experiment configuration, loaded from JSON.
//!
//! ```json
//! {
//!   "d": 10, "r": 1, "n": 4000, "spectrum": [1.0],
//!   "sigma": 0.0, "eps": 0.05, "strategy": "counterexample",
//!   "seed": 7, "iota": 1e-6,
//!   "output": { "trace_csv": "trace.csv", "summary_json": "summary.json" }
//! }
//! ```
//!
//! Optional keys: `gamma` (default `36 * max(spectrum)`), `max_global_iters`,
//! `max_refine_iters`, `record_timings` (default false; timings make
//! outputs nondeterministic), and `output.dataset`. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corruption::{CorruptionPlan, Strategy};
use crate::sensing::{ProblemSpec, RecoveryOptions};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<PathBuf>,
}

fn default_iota() -> f64 {
    1e-6
}

fn default_strategy() -> Strategy {
    Strategy::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub spectrum: Vec<f64>,
    #[serde(default)]
    pub sigma: f64,
    pub eps: f64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iota")]
    pub iota: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_global_iters: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_refine_iters: Option<usize>,
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn sigma_1_star(&self) -> f64 {
        self.spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sigma_r_star(&self) -> f64 {
        self.spectrum.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(36.0 * self.sigma_1_star())
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            d: self.d,
            r: self.r,
            gamma: self.gamma(),
            sigma_r_star: self.sigma_r_star(),
            sigma: self.sigma,
            eps: self.eps,
        }
    }

    pub fn corruption_plan(&self) -> CorruptionPlan {
        CorruptionPlan {
            strategy: self.strategy,
            eps: self.eps,
            seed: self.seed,
        }
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        RecoveryOptions {
            u0: None,
            iota: self.iota,
            max_global_iters: self.max_global_iters,
            max_refine_iters: self.max_refine_iters,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::ConfigInvalid(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.spectrum.len() != self.r {
            return bad(format!(
                "spectrum has {} values but r = {}",
                self.spectrum.len(),
                self.r
            ));
        }
        if self.spectrum.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("spectrum values must be positive and finite".into());
        }
        if !(self.iota.is_finite() && self.iota > 0.0) {
            return bad(format!("iota must be positive, got {}", self.iota));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g >= self.sigma_1_star()) {
                return bad(format!(
                    "gamma = {g} must be at least the top of the spectrum ({})",
                    self.sigma_1_star()
                ));
            }
        }
        self.problem_spec()
            .validate()
            .or_else(|e| bad(e.to_string()))?;
        if self.strategy != Strategy::None && self.corruption_plan().count(self.n) == 0 {
            return bad(format!(
                "eps * n = {} < 1 leaves nothing to corrupt",
                self.eps * self.n as f64
            ));
        }
        if self.strategy == Strategy::Counterexample && self.sigma != 0.0 {
            return bad("the counterexample strategy requires sigma = 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [1.0], "eps": 0.05}"#;

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.strategy, Strategy::None);
        assert_eq!(cfg.iota, 1e-6);
        assert_eq!(cfg.gamma(), 36.0);
        assert!(!cfg.record_timings);
    }

    #[test]
    fn invalid_configs() {
        let cases = [
            r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [1.0], "eps": 0.6}"#,
            r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [1.0], "eps": 0.05, "typo": 1}"#,
            r#"{"d": 10, "r": 2, "n": 4000, "spectrum": [1.0], "eps": 0.05}"#,
            r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [-1.0], "eps": 0.05}"#,
            r#"{"d": 10, "r": 1, "n": 10, "spectrum": [1.0], "eps": 0.05, "strategy": "large_outliers"}"#,
            r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [1.0], "eps": 0.05, "sigma": 1.0, "strategy": "counterexample"}"#,
            r#"{"d": 10, "r": 1, "n": 4000, "spectrum": [1.0], "eps": 0.05, "output": {"csv": "x"}}"#,
        ];
        for text in cases {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(HarnessError::ConfigInvalid(_))),
                "{text}"
            );
        }
    }
}
