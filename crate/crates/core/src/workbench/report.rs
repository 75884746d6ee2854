use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::problem_file::{rows_of, to_canonical_json};
use crate::certificate::Certificate;
use crate::closed_loop::{BaseTrajectory, ClosedLoopReport, LossInterval, StopReason};
use crate::lifting::{LiftedProblem, Margins};
use crate::{HorizonMode, Result};

pub const REPORT_SCHEMA_VERSION: u64 = 1;

/// Hex SHA-256 of the raw input file.
pub fn input_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            status: if passed {
                CheckStatus::Passed
            } else {
                CheckStatus::Failed
            },
            detail: detail.into(),
        }
    }

    pub fn skipped(name: &str, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            status: CheckStatus::Skipped,
            detail: detail.into(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Failed
    }
}

/// Condensed view of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub x0: Vec<f64>,
    pub steps: usize,
    pub stop_reason: StopReason,
    pub realized_cost: f64,
    pub tail_bound: f64,
    pub cost_lo: f64,
    pub cost_hi: f64,
    /// Interval for `β(ξ)`; absent when no infinite-horizon reference exists.
    pub loss: Option<LossInterval>,
    /// `β_bound · |ξ|²`
    pub loss_bound: f64,
    pub base_cost: Option<f64>,
    pub decrease_violations: Vec<usize>,
    pub envelope_violations: Vec<usize>,
    pub min_decrease_margin: Option<f64>,
}

impl RunSummary {
    pub fn new(
        report: &ClosedLoopReport,
        cert: &Certificate,
        loss: Option<LossInterval>,
        base: Option<&BaseTrajectory>,
    ) -> Self {
        let x0 = &report.states[0];
        let (cost_lo, cost_hi) = report.cost_interval();
        RunSummary {
            x0: x0.iter().copied().collect(),
            steps: report.steps(),
            stop_reason: report.stop_reason,
            realized_cost: report.realized_cost,
            tail_bound: report.tail_bound,
            cost_lo,
            cost_hi,
            loss,
            loss_bound: cert.beta_bound * x0.norm_squared(),
            base_cost: base.map(|b| b.cost),
            decrease_violations: report.decrease_violations.clone(),
            envelope_violations: report.envelope_violations.clone(),
            min_decrease_margin: report.decrease_margins.iter().copied().reduce(f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u64,
    pub input_digest: String,
    pub d: usize,
    pub horizon: usize,
    pub certificate: Certificate,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<CheckResult>,
    pub timing_ms: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn passed(&self) -> bool {
        !self.checks.iter().any(CheckResult::failed)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Lifted trajectory as CSV: `t, x1.., u1.., stage_cost, w1`. The final row
/// carries the terminal state only.
pub fn write_trajectory_csv(path: &Path, report: &ClosedLoopReport) -> Result<()> {
    let n = report.states[0].len();
    let p = report.inputs.first().map_or(0, DVector::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=p).map(|i| format!("u{i}")));
    header.extend(["stage_cost".to_string(), "w1".to_string()]);
    w.write_record(&header)?;
    for (t, x) in report.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|&v| fmt(v)));
        match report.inputs.get(t) {
            Some(u) => row.extend(u.iter().map(|&v| fmt(v))),
            None => row.extend(std::iter::repeat_n(String::new(), p)),
        }
        row.push(report.stage_costs.get(t).map_or(String::new(), |&c| fmt(c)));
        row.push(report.w1.get(t).map_or(String::new(), |&c| fmt(c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Base trajectory as CSV: `k, x1.., u1.., stage_cost, w1`, with `w1` filled
/// in at the block boundaries `k = d·t`.
pub fn write_base_csv(path: &Path, d: usize, base: &BaseTrajectory, w1: &[f64]) -> Result<()> {
    let n = base.states[0].len();
    let m = base.inputs.first().map_or(0, DVector::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(["stage_cost".to_string(), "w1".to_string()]);
    w.write_record(&header)?;
    for (k, x) in base.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|&v| fmt(v)));
        match base.inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|&v| fmt(v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        row.push(base.stage_costs.get(k).map_or(String::new(), |&c| fmt(c)));
        let boundary = (k % d == 0).then(|| w1.get(k / d)).flatten();
        row.push(boundary.map_or(String::new(), |&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedStepDump {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub correction: Vec<Vec<f64>>,
}

/// Lifted data and margins as emitted by `lift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedDump {
    pub d: usize,
    pub n: usize,
    pub input_dim: usize,
    pub mode: String,
    pub len: usize,
    pub discarded_tail: usize,
    pub margins: Margins,
    pub steps: Vec<LiftedStepDump>,
}

impl LiftedDump {
    pub fn new(lp: &LiftedProblem) -> Self {
        LiftedDump {
            d: lp.d(),
            n: lp.n(),
            input_dim: lp.input_dim(),
            mode: match lp.mode() {
                HorizonMode::Periodic { .. } => "periodic",
                HorizonMode::Window { .. } => "window",
            }
            .to_string(),
            len: lp.len(),
            discarded_tail: lp.discarded_tail(),
            margins: lp.margins(),
            steps: lp
                .steps()
                .iter()
                .map(|s| LiftedStepDump {
                    a: rows_of(&s.a),
                    b: rows_of(&s.b),
                    q: rows_of(&s.q),
                    r: rows_of(&s.r),
                    correction: rows_of(&s.correction),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }
}
