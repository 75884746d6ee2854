use nalgebra::DVector;

use crate::certificate::{build_certificate_with, certificate_for_horizon, synthesize, Certificate, Synthesis};
use crate::closed_loop::{
    candidate_policy, performance_loss, simulate_with, unlift_controls, BaseTrajectory, ClosedLoopReport, LossInterval,
    PolicyRealization, SimulationOptions,
};
use crate::lifting::LiftedProblem;
use crate::riccati::{contraction_constants, solve_infinite_horizon_with, RiccatiApprox};
use crate::{Error, Result};

/// Truncation tolerance of the reference Riccati solution.
pub const REFERENCE_TOL: f64 = 1e-13;

/// Relative stopping threshold used when the loss of a run is measured.
pub const LOSS_STOP: f64 = 1e-14;

/// Approximate infinite-horizon solution on `[0, L]` (periodic) or at `t = 0`
/// (window). `None` when the window is too short to certify it.
pub fn reference_solution(lp: &LiftedProblem) -> Result<Option<RiccatiApprox>> {
    let cc = contraction_constants(lp)?;
    let t1 = if lp.is_periodic() { lp.len() } else { 0 };
    match solve_infinite_horizon_with(lp, 0, t1, REFERENCE_TOL, &cc) {
        Ok(ra) => Ok(Some(ra)),
        Err(Error::InsufficientPreview { .. }) if !lp.is_periodic() => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn certify(lp: &LiftedProblem, horizon: usize, ra: Option<&RiccatiApprox>) -> Result<Certificate> {
    let cc = contraction_constants(lp)?;
    match ra {
        Some(ra) => build_certificate_with(lp, horizon, ra, &cc),
        None => certificate_for_horizon(lp, horizon, &cc),
    }
}

pub fn synthesize_horizon(
    lp: &LiftedProblem,
    beta: f64,
    t_max: usize,
    ra: Option<&RiccatiApprox>,
) -> Result<Synthesis> {
    synthesize(lp, beta, t_max, ra)
}

/// One closed-loop run with everything derived from it.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: ClosedLoopReport,
    pub base: BaseTrajectory,
    pub loss: Option<LossInterval>,
}

/// Options for [`run_closed_loop`]; the stopping threshold is relative to `|ξ|²`.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub relative_stop: f64,
    pub min_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            relative_stop: LOSS_STOP,
            min_steps: 0,
        }
    }
}

pub fn run_closed_loop(
    lp: &LiftedProblem,
    pol: &PolicyRealization,
    xi: &DVector<f64>,
    ra: Option<&RiccatiApprox>,
    opts: &RunOptions,
) -> Result<Run> {
    let sim = SimulationOptions {
        stop: Some(opts.relative_stop * xi.norm_squared()),
        min_steps: opts.min_steps,
        ..SimulationOptions::default()
    };
    let mut report = simulate_with(lp, pol, xi, &sim)?;
    let base = unlift_controls(lp, pol, &report)?;
    report.base = Some(base.clone());
    let loss = match ra {
        Some(ra) if lp.is_periodic() => Some(performance_loss(&report, ra, xi)?),
        _ => None,
    };
    Ok(Run { report, base, loss })
}

/// Candidate-penalty policy for horizon `T`.
pub fn policy(lp: &LiftedProblem, horizon: usize) -> Result<PolicyRealization> {
    candidate_policy(lp, horizon)
}
