//! The lifted Riccati operator
//!
//! ```text
//! 𝓡_t(P) = Q̃_t + Ã_tᵀ (P − P B̃_t (R̃_t + B̃_tᵀ P B̃_t)⁻¹ B̃_tᵀ P) Ã_t
//! ```
//!
//! its compositions, its per-step Riemannian contraction rate, and a
//! certified approximation of the bounded solution of `P_t = 𝓡_t(P_{t+1})`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certificate::{delta_bar, terminal_candidate};
use crate::lifting::{LiftedProblem, LiftedStep};
use crate::linalg::{self, symmetrize};
use crate::spd::{relative_eigenvalues, SpdMatrix};
use crate::{Error, Result};

/// Below this ratio `λ_min(P)/‖P‖₂` the factored form of the inner term is used.
const NEAR_SINGULAR_RATIO: f64 = 1e-8;

/// Longest backward tail `solve_infinite_horizon` will run.
pub const MAX_TAIL: usize = 10_000_000;

/// Longest tail taken from the contraction rate alone; beyond it the
/// solution is bracketed from both sides instead.
const A_PRIORI_TAIL: usize = 4096;

/// `P − P B̃ (R̃ + B̃ᵀ P B̃)⁻¹ B̃ᵀ P` for positive semi-definite `P`.
fn inner_term(step: &LiftedStep, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::sym_eigen(p, "Riccati operator argument")?;
    let (lmin, lmax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let n = p.nrows();
    if lmax <= 0.0 || lmin < NEAR_SINGULAR_RATIO * lmax {
        // P^{1/2} (I + P^{1/2} B̃R̃⁻¹B̃ᵀ P^{1/2})⁻¹ P^{1/2}
        let v = &eig.eigenvectors;
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let s = symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose()));
        let core = DMatrix::identity(n, n) + &s * &step.brb * &s;
        let chol = linalg::cholesky(&core, "Riccati operator (factored form)")?;
        Ok(symmetrize(&(&s * chol.solve(&s))))
    } else {
        let pb = p * &step.b;
        let m = &step.r + step.b.transpose() * &pb;
        let chol = linalg::cholesky(&m, "Riccati operator")?;
        Ok(symmetrize(&(p - &pb * chol.solve(&pb.transpose()))))
    }
}

/// One application of the lifted Riccati operator at step `t`. `P` may be
/// any positive semi-definite matrix, including zero.
pub fn riccati_apply(lp: &LiftedProblem, t: usize, p: &DMatrix<f64>) -> Result<SpdMatrix> {
    if p.shape() != (lp.n(), lp.n()) {
        return Err(Error::dims(
            "riccati_apply",
            format!("{0}x{0}", lp.n()),
            format!("{}x{}", p.nrows(), p.ncols()),
        ));
    }
    let step = lp.step(t)?;
    let scale = linalg::norm2(p)?;
    let lmin = linalg::lambda_min(p)?;
    if lmin < -lp.tolerances().psd_tol * scale {
        return Err(Error::InvalidArgument(format!(
            "Riccati operator argument is not positive semi-definite (smallest eigenvalue {lmin:.3e})"
        )));
    }
    let d = inner_term(step, p)?;
    let out = &step.q + step.a.transpose() * d * &step.a;
    SpdMatrix::from_symmetric(out).map_err(|e| match e {
        Error::NotPositiveDefinite { min_eigenvalue } => Error::numerical(
            format!("Riccati operator output (λ_min {min_eigenvalue:.3e})"),
            f64::INFINITY,
        ),
        other => other,
    })
}

/// `𝓡_t ∘ 𝓡_{t+1} ∘ ⋯ ∘ 𝓡_{t+steps−1}(X)`; `steps = 0` returns `X`.
pub fn riccati_compose(lp: &LiftedProblem, t: usize, x: &SpdMatrix, steps: usize) -> Result<SpdMatrix> {
    let mut acc = x.clone();
    for s in (t..t + steps).rev() {
        acc = riccati_apply(lp, s, acc.matrix())?;
    }
    Ok(acc)
}

/// Contraction data of one lifted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepContraction {
    pub zeta: f64,
    pub eps: f64,
    pub rho: f64,
}

/// Per-step contraction rates and their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub per_step: Vec<StepContraction>,
    pub zeta_bar: f64,
    pub eps_min: f64,
    pub rho_bar: f64,
    /// Aggregates cover only the stored window rather than all time.
    pub window_limited: bool,
}

impl ContractionConstants {
    pub fn rho(&self, lp: &LiftedProblem, t: usize) -> Result<f64> {
        Ok(self.per_step[lp.mode().resolve(t)?].rho)
    }
}

/// `ζ_t`, `ε_t` and `ρ_t = ζ_t / (ζ_t + ε_t)` for one step.
///
/// ```text
/// ζ_t = ‖(Q̃ + Q̃ Ã⁻¹B̃ R̃⁻¹ B̃ᵀÃ⁻ᵀ Q̃)⁻¹‖₂
/// ε_t = λ_min(Ã⁻¹B̃ (R̃ + B̃ᵀÃ⁻ᵀ Q̃ Ã⁻¹B̃)⁻¹ B̃ᵀÃ⁻ᵀ)
/// ```
pub fn step_contraction(step: &LiftedStep) -> Result<StepContraction> {
    let f = linalg::lu_solve(&step.a, &step.b, "Ã⁻¹B̃")?;
    let r_chol = linalg::cholesky(&step.r, "R̃")?;
    let g = symmetrize(&(&f * r_chol.solve(&f.transpose())));
    let zeta_mat = &step.q + &step.q * g * &step.q;
    let zeta = 1.0 / linalg::lambda_min(&zeta_mat)?;

    let inner = &step.r + f.transpose() * &step.q * &f;
    let inner_chol = linalg::cholesky(&inner, "R̃ + B̃ᵀÃ⁻ᵀQ̃Ã⁻¹B̃")?;
    let eps_mat = symmetrize(&(&f * inner_chol.solve(&f.transpose())));
    let eps = linalg::lambda_min(&eps_mat)?;

    if !(zeta.is_finite() && zeta > 0.0 && eps > 0.0) {
        return Err(Error::certification(
            format!("contraction constants out of range (ζ = {zeta:.3e}, ε = {eps:.3e})"),
            None,
        ));
    }
    Ok(StepContraction {
        zeta,
        eps,
        rho: zeta / (zeta + eps),
    })
}

/// Contraction constants over one lifted period, or over the whole window.
pub fn contraction_constants(lp: &LiftedProblem) -> Result<ContractionConstants> {
    let per_step = lp
        .steps()
        .iter()
        .enumerate()
        .map(|(t, s)| {
            step_contraction(s).map_err(|e| match e {
                Error::Certification { reason, .. } => Error::certification(reason, Some(t)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let zeta_bar = per_step.iter().map(|c| c.zeta).fold(0.0, f64::max);
    let eps_min = per_step.iter().map(|c| c.eps).fold(f64::INFINITY, f64::min);
    let rho_bar = zeta_bar / (zeta_bar + eps_min);
    if !(rho_bar < 1.0) {
        return Err(Error::certification(
            format!("aggregate contraction rate {rho_bar} is not below 1"),
            None,
        ));
    }
    Ok(ContractionConstants {
        per_step,
        zeta_bar,
        eps_min,
        rho_bar,
        window_limited: !lp.is_periodic(),
    })
}

/// Approximation of the infinite-horizon Riccati solution on a window of
/// lifted indices, with a Riemannian error bound.
///
/// Every stored `P̂_t` satisfies `δ(P̂_t, P_t) ≤ trunc_err` and, because the
/// recursion starts from the terminal candidate, `P̂_t ⪰ P_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiApprox {
    pub t0: usize,
    pub t1: usize,
    pub values: Vec<SpdMatrix>,
    pub tail_len: usize,
    pub trunc_err: f64,
    pub rho_bar: f64,
    pub delta_bar: f64,
}

impl RiccatiApprox {
    pub fn at(&self, t: usize) -> Option<&SpdMatrix> {
        if t < self.t0 {
            return None;
        }
        self.values.get(t - self.t0)
    }

    /// Spectral-norm bound on `P̂_t − P_t` implied by the truncation error.
    pub fn spectral_gap(&self, t: usize) -> Result<f64> {
        let p = self.at(t).ok_or(Error::IndexOutOfWindow {
            index: t,
            len: self.t1 + 1,
        })?;
        Ok(p.norm2()? * self.trunc_err.exp_m1())
    }
}

/// Tail length `N` with `ρ̄^N δ̄ ≤ tol`.
pub fn tail_length(rho_bar: f64, delta_bar: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("truncation tolerance must be positive".into()));
    }
    if !(rho_bar < 1.0) {
        return Err(Error::certification(
            format!("contraction rate {rho_bar} is not below 1"),
            None,
        ));
    }
    if delta_bar <= tol {
        return Ok(0);
    }
    if rho_bar <= 0.0 {
        return Ok(1);
    }
    let n = ((tol / delta_bar).ln() / rho_bar.ln()).ceil();
    if n > MAX_TAIL as f64 {
        return Err(Error::certification(
            format!("truncation tolerance needs a tail of {n:.0} steps (ρ̄ = {rho_bar})"),
            None,
        ));
    }
    let mut n = n.max(0.0) as usize;
    // guard against rounding in the logarithms
    while rho_bar.powi(n as i32) * delta_bar > tol {
        n += 1;
    }
    Ok(n)
}

/// Runs the backward recursion from the terminal candidate far enough beyond
/// `t1` that the Riemannian error on `[t0, t1]` is at most `tol_delta`.
///
/// The tail comes from `ρ̄` when that gives at most a few thousand steps.
/// Otherwise the tail is doubled until the recursions started from `Q̃` and
/// from the candidate agree to `tol_delta`.
pub fn solve_infinite_horizon(lp: &LiftedProblem, t0: usize, t1: usize, tol_delta: f64) -> Result<RiccatiApprox> {
    if t1 < t0 {
        return Err(Error::InvalidArgument(format!("empty window [{t0}, {t1}]")));
    }
    let cc = contraction_constants(lp)?;
    solve_infinite_horizon_with(lp, t0, t1, tol_delta, &cc)
}

pub fn solve_infinite_horizon_with(
    lp: &LiftedProblem,
    t0: usize,
    t1: usize,
    tol_delta: f64,
    cc: &ContractionConstants,
) -> Result<RiccatiApprox> {
    let dbar = delta_bar(lp, 0)?;
    let a_priori = match tail_length(cc.rho_bar, dbar, tol_delta) {
        Ok(n) => Some(n),
        Err(Error::Certification { .. }) if cc.rho_bar < 1.0 => None,
        Err(e) => return Err(e),
    };
    if let Some(tail_len) = a_priori.filter(|&n| n <= A_PRIORI_TAIL) {
        let end = check_preview(lp, t1 + tail_len)?;
        let values = backward(lp, t0, t1, end, terminal_candidate(lp, end)?)?;
        return Ok(RiccatiApprox {
            t0,
            t1,
            values,
            tail_len,
            trunc_err: cc.rho_bar.powi(tail_len as i32) * dbar,
            rho_bar: cc.rho_bar,
            delta_bar: dbar,
        });
    }
    // The recursion from Q̃ increases towards the solution and the one from
    // the candidate decreases towards it, so the pair brackets P_t.
    let n = lp.n() as f64;
    let mut tail_len = A_PRIORI_TAIL.min(a_priori.unwrap_or(usize::MAX)).max(1);
    loop {
        let end = check_preview(lp, t1 + tail_len)?;
        let upper = backward(lp, t0, t1, end, terminal_candidate(lp, end)?)?;
        let lower = backward(lp, t0, t1, end, SpdMatrix::from_symmetric(lp.step(end)?.q.clone())?)?;
        let mut bracket: f64 = 0.0;
        for (u, l) in upper.iter().zip(&lower) {
            let top = relative_eigenvalues(u, l)?.max().max(1.0);
            bracket = bracket.max(n.sqrt() * top.ln());
        }
        if bracket <= tol_delta || a_priori.is_some_and(|a| tail_len >= a) {
            let trunc_err = match a_priori {
                Some(a) if tail_len >= a => bracket.min(cc.rho_bar.powi(tail_len as i32) * dbar),
                _ => bracket,
            };
            return Ok(RiccatiApprox {
                t0,
                t1,
                values: upper,
                tail_len,
                trunc_err,
                rho_bar: cc.rho_bar,
                delta_bar: dbar,
            });
        }
        if tail_len >= MAX_TAIL {
            return Err(Error::certification(
                format!("bracket width {bracket:e} above {tol_delta:e} after a tail of {tail_len} steps"),
                None,
            ));
        }
        tail_len = (tail_len * 2).min(MAX_TAIL);
    }
}

fn check_preview(lp: &LiftedProblem, end: usize) -> Result<usize> {
    if !lp.is_periodic() && end >= lp.len() {
        return Err(Error::InsufficientPreview {
            required: end + 1,
            available: lp.len(),
        });
    }
    Ok(end)
}

/// Values on `[t0, t1]` of the backward recursion started at `end`.
fn backward(lp: &LiftedProblem, t0: usize, t1: usize, end: usize, mut x: SpdMatrix) -> Result<Vec<SpdMatrix>> {
    let mut values = Vec::with_capacity(t1 - t0 + 1);
    if end == t1 {
        values.push(x.clone());
    }
    for s in (t0..end).rev() {
        x = riccati_apply(lp, s, x.matrix())?;
        if s <= t1 {
            values.push(x.clone());
        }
    }
    values.reverse();
    Ok(values)
}
