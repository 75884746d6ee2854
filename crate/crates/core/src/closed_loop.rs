//! Running the receding-horizon policy.
//!
//! The `T`-step receding-horizon policy with penalties `X̂` applies the first
//! block of the `T`-step minimiser, which by dynamic programming is the
//! one-step policy `ũ_t = −K_t x̃_t` with
//! `K_t = (R̃_t + B̃_tᵀX̂_{t+1}B̃_t)⁻¹ B̃_tᵀX̂_{t+1}Ã_t`.
//! The value function `W₁(t, x̃) = x̃ᵀ𝓡_t(X̂_{t+1})x̃` is a Lyapunov function
//! for the closed loop, and the simulation checks its decrease at every step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::hat_x_sequence;
use crate::lifting::{propagate_block, LiftedProblem, LiftedStep};
use crate::linalg::{self, quad_form, symmetrize};
use crate::riccati::{riccati_apply, RiccatiApprox};
use crate::spd::SpdMatrix;
use crate::{Error, Result};

/// Consecutive growth steps after which a run counts as diverging.
pub const DIVERGENCE_WINDOW: usize = 20;

/// Relative tolerance of the block consistency check in [`unlift_controls`].
const CONSISTENCY_TOL: f64 = 1e-8;

/// `K = (R̃ + B̃ᵀXB̃)⁻¹ B̃ᵀXÃ`.
pub fn feedback_gain(step: &LiftedStep, x_next: &SpdMatrix) -> Result<DMatrix<f64>> {
    let xb = x_next.matrix() * &step.b;
    let h = symmetrize(&(&step.r + step.b.transpose() * &xb));
    let chol = linalg::cholesky(&h, "R̃ + B̃ᵀXB̃")?;
    let k = chol.solve(&(xb.transpose() * &step.a));
    if !linalg::all_finite(&k) {
        return Err(Error::NonFinite);
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySource {
    Candidate,
    Custom,
}

/// Per-step gains of a receding-horizon policy together with the quantities
/// needed to check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRealization {
    pub horizon: usize,
    pub periodic: bool,
    pub gains: Vec<DMatrix<f64>>,
    /// `R̃_t⁻¹Δ_tᵀΞ_t`, so the base input block is `ũ_t − F_t x̃_t`.
    pub corrections: Vec<DMatrix<f64>>,
    /// `𝓡_t(X̂_{t+1})`, the matrix of `W₁(t, ·)`.
    pub value_matrices: Vec<SpdMatrix>,
    /// `sup_t ‖𝓡_t(X̂_{t+1})‖₂`
    pub omega_max: f64,
    /// `max(inf_t λ_min(𝓡_t(X̂_{t+1})), inf_t λ_min(Q̃_t))`
    pub omega_min: f64,
    /// `inf_t λ_min(Q̃_t + K_tᵀR̃_tK_t)`
    pub lambda_min: f64,
    pub source: PenaltySource,
}

impl PolicyRealization {
    /// Number of distinct lifted steps the policy covers.
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    fn index(&self, t: usize) -> Option<usize> {
        if self.periodic {
            Some(t % self.gains.len())
        } else {
            (t < self.gains.len()).then_some(t)
        }
    }

    pub fn gain(&self, t: usize) -> Result<&DMatrix<f64>> {
        let i = self.index(t).ok_or(Error::IndexOutOfWindow {
            index: t,
            len: self.len(),
        })?;
        Ok(&self.gains[i])
    }

    /// `μ(t, x̃) = −K_t x̃`.
    pub fn action(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-(self.gain(t)? * x))
    }

    /// `W₁(t, x̃, X̂_{t+1})`.
    pub fn value(&self, t: usize, x: &DVector<f64>) -> Result<f64> {
        let i = self.index(t).ok_or(Error::IndexOutOfWindow {
            index: t,
            len: self.len(),
        })?;
        Ok(self.value_matrices[i].quad_form(x))
    }

    /// `|x̃_t|²` bound from the state envelope.
    pub fn envelope(&self, t: usize, x0_sq: f64) -> f64 {
        let decay = (1.0 - self.lambda_min / self.omega_max).clamp(0.0, 1.0);
        self.omega_max / self.omega_min * decay.powi(t.min(i32::MAX as usize) as i32) * x0_sq
    }
}

/// Policy from a penalty sequence `hat[t] = X̂_t`, `t = 0, …, L`; gains are
/// produced for `t = 0, …, L − 1`. For periodic problems `L` must be the
/// lifted period.
pub fn rh_gains(
    lp: &LiftedProblem,
    hat: &[SpdMatrix],
    horizon: usize,
    source: PenaltySource,
) -> Result<PolicyRealization> {
    if hat.len() < 2 {
        return Err(Error::InvalidArgument(
            "penalty sequence must contain at least two matrices".into(),
        ));
    }
    let len = hat.len() - 1;
    if lp.is_periodic() && len != lp.len() {
        return Err(Error::dims(
            "penalty sequence for a periodic problem",
            lp.len() + 1,
            hat.len(),
        ));
    }
    for x in hat {
        if x.dim() != lp.n() {
            return Err(Error::dims("terminal penalty", lp.n(), x.dim()));
        }
    }
    let mut gains = Vec::with_capacity(len);
    let mut corrections = Vec::with_capacity(len);
    let mut value_matrices = Vec::with_capacity(len);
    let mut omega_max: f64 = 0.0;
    let mut omega_inf = f64::INFINITY;
    let mut lambda_min = f64::INFINITY;
    for t in 0..len {
        let step = lp.step(t)?;
        let k = feedback_gain(step, &hat[t + 1])?;
        let v = riccati_apply(lp, t, hat[t + 1].matrix())?;
        let eig = v.eigenvalues()?;
        omega_max = omega_max.max(eig.max());
        omega_inf = omega_inf.min(eig.min());
        lambda_min = lambda_min.min(linalg::lambda_min(&symmetrize(
            &(&step.q + k.transpose() * &step.r * &k),
        ))?);
        gains.push(k);
        corrections.push(step.correction.clone());
        value_matrices.push(v);
    }
    Ok(PolicyRealization {
        horizon,
        periodic: lp.is_periodic(),
        gains,
        corrections,
        value_matrices,
        omega_max,
        omega_min: omega_inf.max(lp.margins().q_min),
        lambda_min,
        source,
    })
}

/// Receding-horizon policy with horizon `T` and the candidate penalties.
pub fn candidate_policy(lp: &LiftedProblem, horizon: usize) -> Result<PolicyRealization> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let last = if lp.is_periodic() {
        lp.len()
    } else {
        // X̂_s needs the candidate at s + T − 1
        if lp.len() < horizon + 1 {
            return Err(Error::InsufficientPreview {
                required: horizon + 1,
                available: lp.len(),
            });
        }
        lp.len() - horizon
    };
    let hat = hat_x_sequence(lp, horizon, 0, last)?;
    rh_gains(lp, &hat, horizon, PenaltySource::Candidate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Stop once `ω̄|x̃_t|² ≤ stop`; `None` means `1e-10·|ξ|²`.
    pub stop: Option<f64>,
    /// Run at least this many steps even if the stopping rule fires.
    pub min_steps: usize,
    pub max_steps: usize,
    pub divergence_window: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            stop: None,
            min_steps: 0,
            max_steps: 1_000_000,
            divergence_window: DIVERGENCE_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxSteps,
    EndOfWindow,
}

/// Base-domain trajectory recovered from a lifted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    /// `x̃_0, …, x̃_N`
    pub states: Vec<DVector<f64>>,
    /// `ũ_0, …, ũ_{N−1}`
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    /// `W₁(t, x̃_t)` for `t = 0, …, N`
    pub w1: Vec<f64>,
    /// `Σ_t x̃_tᵀQ̃_tx̃_t + ũ_tᵀR̃_tũ_t` over the simulated steps.
    pub realized_cost: f64,
    /// Upper bound `ω̄|x̃_N|²` on the cost still to come.
    pub tail_bound: f64,
    /// `−l_t − (W₁(t+1) − W₁(t))`; non-negative up to rounding.
    pub decrease_margins: Vec<f64>,
    pub decrease_violations: Vec<usize>,
    pub envelope_violations: Vec<usize>,
    pub stop_reason: StopReason,
    pub omega_max: f64,
    pub omega_min: f64,
    pub lambda_min: f64,
    pub base: Option<BaseTrajectory>,
}

impl ClosedLoopReport {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// `[J_real, J_real + tail]`
    pub fn cost_interval(&self) -> (f64, f64) {
        (self.realized_cost, self.realized_cost + self.tail_bound)
    }

    pub fn passed(&self) -> bool {
        self.decrease_violations.is_empty() && self.envelope_violations.is_empty()
    }
}

pub fn simulate(lp: &LiftedProblem, pol: &PolicyRealization, xi: &DVector<f64>) -> Result<ClosedLoopReport> {
    simulate_with(lp, pol, xi, &SimulationOptions::default())
}

pub fn simulate_with(
    lp: &LiftedProblem,
    pol: &PolicyRealization,
    xi: &DVector<f64>,
    opts: &SimulationOptions,
) -> Result<ClosedLoopReport> {
    if xi.len() != lp.n() {
        return Err(Error::dims("initial state", lp.n(), xi.len()));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if pol.is_empty() || pol.gains[0].ncols() != lp.n() || pol.gains[0].nrows() != lp.input_dim() {
        return Err(Error::InvalidArgument(
            "policy does not match the lifted problem".into(),
        ));
    }
    if pol.periodic != lp.is_periodic() {
        return Err(Error::InvalidArgument(
            "policy and problem disagree on periodicity".into(),
        ));
    }
    let x0_sq = xi.norm_squared();
    let stop = opts.stop.unwrap_or(1e-10 * x0_sq);
    let floor = x0_sq * 1e-28;

    let mut states = vec![xi.clone()];
    let mut inputs = Vec::new();
    let mut stage_costs = Vec::new();
    let mut w1 = vec![pol.value(0, xi)?];
    let mut decrease_margins = Vec::new();
    let mut decrease_violations = Vec::new();
    let mut envelope_violations = Vec::new();
    let mut realized_cost = 0.0;
    let mut growth_run = 0usize;

    let stop_reason = loop {
        let t = inputs.len();
        let x = &states[t];
        if t >= opts.min_steps && pol.omega_max * x.norm_squared() <= stop {
            break StopReason::Tolerance;
        }
        if t >= opts.max_steps {
            break StopReason::MaxSteps;
        }
        if !pol.periodic && t >= pol.len() {
            break StopReason::EndOfWindow;
        }
        let step = lp.step(t)?;
        let u = pol.action(t, x)?;
        let stage = quad_form(&step.q, x) + quad_form(&step.r, &u);
        let next = &step.a * x + &step.b * &u;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t + 1,
                norm: f64::INFINITY,
            });
        }
        realized_cost += stage;

        let next_sq = next.norm_squared();
        if next_sq > x.norm_squared() {
            growth_run += 1;
        } else {
            growth_run = 0;
        }
        if growth_run >= opts.divergence_window && next_sq > pol.omega_max / pol.omega_min * x0_sq {
            return Err(Error::Divergence {
                step: t + 1,
                norm: next_sq.sqrt(),
            });
        }

        let w_next = if pol.periodic || t + 1 < pol.len() {
            Some(pol.value(t + 1, &next)?)
        } else {
            None
        };
        if let Some(w_next) = w_next {
            // both sides are quadratic in x, so the test runs on x/|x| to
            // stay clear of underflow
            let scale = x.norm();
            let margin = if scale > 0.0 {
                let xh = x / scale;
                let uh = &u / scale;
                let next_h = &step.a * &xh + &step.b * &uh;
                let stage_h = quad_form(&step.q, &xh) + quad_form(&step.r, &uh);
                -stage_h - (pol.value(t + 1, &next_h)? - pol.value(t, &xh)?)
            } else {
                0.0
            };
            if margin < -1e-8 * pol.omega_max {
                decrease_violations.push(t);
            }
            decrease_margins.push(margin * scale * scale);
            w1.push(w_next);
        }
        if next_sq > pol.envelope(t + 1, x0_sq) * (1.0 + 1e-6) + floor {
            envelope_violations.push(t + 1);
        }

        inputs.push(u);
        stage_costs.push(stage);
        states.push(next);
    };

    let last = states.last().map(|x| x.norm_squared()).unwrap_or(0.0);
    Ok(ClosedLoopReport {
        states,
        inputs,
        stage_costs,
        w1,
        realized_cost,
        tail_bound: pol.omega_max * last,
        decrease_margins,
        decrease_violations,
        envelope_violations,
        stop_reason,
        omega_max: pol.omega_max,
        omega_min: pol.omega_min,
        lambda_min: pol.lambda_min,
        base: None,
    })
}

/// Recovers the base-domain inputs `u = ũ_t − F_t x̃_t` block by block and
/// propagates the base dynamics from each `x̃_t`, checking that every block
/// lands on `x̃_{t+1}`.
pub fn unlift_controls(
    lp: &LiftedProblem,
    pol: &PolicyRealization,
    report: &ClosedLoopReport,
) -> Result<BaseTrajectory> {
    let base = lp.base();
    let d = lp.d();
    let mut states = Vec::with_capacity(report.steps() * d + 1);
    let mut inputs = Vec::with_capacity(report.steps() * d);
    let mut stage_costs = Vec::with_capacity(report.steps() * d);
    for (t, u_tilde) in report.inputs.iter().enumerate() {
        let i = pol.index(t).ok_or(Error::IndexOutOfWindow {
            index: t,
            len: pol.len(),
        })?;
        let x = &report.states[t];
        let u_block = u_tilde - &pol.corrections[i] * x;
        let mut block = propagate_block(base, t, d, x, &u_block)?;
        let (end, _) = block.pop().expect("propagate_block returns d + 1 entries");
        for (j, (xk, uk)) in block.into_iter().enumerate() {
            let k = d * t + j;
            stage_costs.push(quad_form(base.q(k)?, &xk) + quad_form(base.r(k)?, &uk));
            states.push(xk);
            inputs.push(uk);
        }
        let target = &report.states[t + 1];
        let scale = 1f64.max(target.norm()).max(x.norm());
        let residual = (&end - target).norm() / scale;
        if residual > CONSISTENCY_TOL {
            return Err(Error::LiftingConsistency { step: t, residual });
        }
    }
    states.push(report.states[report.steps()].clone());
    let cost = stage_costs.iter().sum();
    Ok(BaseTrajectory {
        states,
        inputs,
        stage_costs,
        cost,
    })
}

/// Interval containing the performance loss `β(ξ)` of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossInterval {
    pub lo: f64,
    pub hi: f64,
    /// Reported as the measured loss.
    pub mid: f64,
    /// Spectral gap between `P̂_0` and `P_0` converted to a cost on `ξ`.
    pub p_gap: f64,
    /// Allowance for rounding in the cost sums.
    pub rounding: f64,
    /// `ξᵀP̂_0ξ`
    pub optimal_cost: f64,
}

pub fn performance_loss(report: &ClosedLoopReport, ra: &RiccatiApprox, xi: &DVector<f64>) -> Result<LossInterval> {
    let p0 = ra.at(0).ok_or(Error::IndexOutOfWindow {
        index: 0,
        len: ra.t1 + 1,
    })?;
    if xi.len() != p0.dim() {
        return Err(Error::dims("initial state", p0.dim(), xi.len()));
    }
    let optimal_cost = p0.quad_form(xi);
    let p_gap = ra.spectral_gap(0)? * xi.norm_squared();
    let (j_lo, j_hi) = report.cost_interval();
    // summation error of the stage costs and of the quadratic forms
    let terms = (report.steps() + xi.len() * xi.len()) as f64;
    let rounding = 8.0 * f64::EPSILON * terms * (j_hi.abs() + optimal_cost.abs());
    let lo = j_lo - optimal_cost - p_gap - rounding;
    let hi = j_hi - optimal_cost + p_gap + rounding;
    Ok(LossInterval {
        lo,
        hi,
        mid: 0.5 * (lo + hi),
        p_gap,
        rounding,
        optimal_cost,
    })
}
