//! Trace CSV and summary JSON.
//!
//! Trace columns: `iter, phase, grad_norm, min_eig, opnorm_U, dist_opt,
//! elapsed_ms`. One row per solver iteration (`phase` is `global` or
//! `refine`, `iter` counts within the phase), then one `summary` row whose
//! `iter` is the total iteration count. Empty cells mean "not applicable":
//! `min_eig` on gradient steps, `dist_opt` without ground truth,
//! `elapsed_ms` unless timings were requested.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::linalg::op_norm;
use crate::corruption::GroundTruth;
use crate::sensing::{dist_to_solution_set, FactorMatrix, ProblemSpec, RecoveryResult, RefineStop};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: String,
    pub grad_norm: Option<f64>,
    pub min_eig: Option<f64>,
    #[serde(rename = "opnorm_U")]
    pub opnorm_u: Option<f64>,
    pub dist_opt: Option<f64>,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub branch: String,
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub eps: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub sigma_r_star: f64,
    pub strategy: Option<String>,
    pub corrupted: Option<usize>,
    pub seed: u64,
    pub global_iters: usize,
    pub refine_iters: usize,
    pub refine_stop: Option<String>,
    pub final_grad_norm: Option<f64>,
    pub frob_error: Option<f64>,
    pub dist_opt: Option<f64>,
    pub robust_rounds: usize,
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<TraceRow>,
    pub summary: Summary,
}

/// Run metadata that the recovery result does not carry.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub n: usize,
    pub strategy: Option<String>,
    pub corrupted: Option<usize>,
    pub seed: u64,
    pub record_timings: bool,
}

fn ms(t: f64, keep: bool) -> Option<f64> {
    keep.then_some(t)
}

/// Flattens a recovery result into trace rows and a summary.
pub fn build_report(
    result: &RecoveryResult,
    spec: &ProblemSpec,
    truth: Option<&GroundTruth>,
    meta: &RunMeta,
) -> RunReport {
    let dist = |u: &FactorMatrix| truth.and_then(|t| dist_to_solution_set(u, &t.u_star).ok());
    let keep = meta.record_timings;
    let mut rows = Vec::new();

    let mut global_iters = 0;
    if let Some(g) = &result.global {
        for rec in &g.trace.records {
            let u = FactorMatrix::from_vec(spec.d, spec.r, rec.x.as_slice());
            rows.push(TraceRow {
                iter: rec.iter,
                phase: "global".into(),
                grad_norm: Some(rec.grad_norm),
                min_eig: rec.min_eig,
                opnorm_u: Some(op_norm(&u.0)),
                dist_opt: dist(&u),
                elapsed_ms: ms(rec.elapsed_ms, keep),
            });
        }
        global_iters = g.trace.iterations();
    }
    let mut refine_iters = 0;
    let mut final_grad_norm = None;
    if let Some(rf) = &result.refine {
        for rec in &rf.records {
            rows.push(TraceRow {
                iter: rec.iter,
                phase: "refine".into(),
                grad_norm: Some(rec.grad_norm),
                min_eig: None,
                opnorm_u: Some(rec.u.op_norm()),
                dist_opt: dist(&rec.u),
                elapsed_ms: ms(rec.elapsed_ms, keep),
            });
        }
        refine_iters = rf.records.len();
        final_grad_norm = rf.records.last().map(|r| r.grad_norm);
    }

    let timings: BTreeMap<String, f64> = result
        .timings
        .iter()
        .map(|(name, t)| (name.to_string(), t.as_secs_f64() * 1e3))
        .collect();
    let total_ms: f64 = timings.values().sum();
    let u_final = result.u_final.as_ref();
    let frob_error = truth.map(|t| result.frob_error(&t.m_star));
    let dist_final = u_final.and_then(dist);

    rows.push(TraceRow {
        iter: global_iters + refine_iters,
        phase: "summary".into(),
        grad_norm: final_grad_norm,
        min_eig: None,
        opnorm_u: u_final.map(|u| u.op_norm()),
        dist_opt: dist_final,
        elapsed_ms: ms(total_ms, keep),
    });

    let summary = Summary {
        branch: result.branch.as_str().into(),
        d: spec.d,
        r: spec.r,
        n: meta.n,
        eps: spec.eps,
        sigma: spec.sigma,
        gamma: spec.gamma,
        sigma_r_star: spec.sigma_r_star,
        strategy: meta.strategy.clone(),
        corrupted: meta.corrupted,
        seed: meta.seed,
        global_iters,
        refine_iters,
        refine_stop: result.refine.as_ref().map(|r| {
            match r.stop {
                RefineStop::Converged => "converged",
                RefineStop::IterCap => "iter_cap",
            }
            .to_string()
        }),
        final_grad_norm,
        frob_error,
        dist_opt: dist_final,
        robust_rounds: result.robust_rounds(),
        timings_ms: keep.then_some(timings),
    };
    RunReport { rows, summary }
}

impl RunReport {
    pub fn csv_bytes(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let bytes = self.csv_bytes().map_err(|e| HarnessError::io(path, e.into()))?;
        write_file(path, &bytes)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    pub fn write_summary(&self, path: &Path) -> Result<(), HarnessError> {
        write_file(path, self.summary_json().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| HarnessError::io(path, e))
}
