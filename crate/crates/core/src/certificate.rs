//! Terminal penalties, certificate constants, the performance-loss bound and
//! horizon selection.
//!
//! The terminal candidate at lifted step `s` is the cost of steering the
//! state to zero in one lifted step with the minimum-norm input:
//!
//! ```text
//! X_s = Q̃_s + Ã_sᵀ (B̃_sB̃_sᵀ)⁻¹ B̃_s R̃_s B̃_sᵀ (B̃_sB̃_sᵀ)⁻¹ Ã_s
//! ```
//!
//! It dominates `𝓡_s(X)` for every positive semi-definite `X`, so composing
//! `T − 1` Riccati steps on top of it yields penalties
//! `X̂_s = 𝓡_s ∘ ⋯ ∘ 𝓡_{s+T−2}(X_{s+T−1})` that satisfy
//! `X̂_s ⪰ 𝓡_s(X̂_{s+1})` and `X̂_s ⪰ P_s`. The receding-horizon policy with
//! horizon `T` then loses at most
//!
//! ```text
//! β(ξ) ≤ (λ̄/λ̲)(ω̄/ω̲) ω̄ (exp(ρ̄^{T−1} δ̄) − 1) |ξ|²
//! ```
//!
//! relative to the infinite-horizon optimum.

use serde::{Deserialize, Serialize};

use crate::closed_loop::feedback_gain;
use crate::lifting::LiftedProblem;
use crate::linalg::{self, symmetrize};
use crate::riccati::{contraction_constants, riccati_apply, riccati_compose, ContractionConstants, RiccatiApprox};
use crate::spd::SpdMatrix;
use crate::{Error, Result};

/// Default upper limit on the prediction horizon.
pub const DEFAULT_T_MAX: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    /// Suprema and infima are exact over one lifted period.
    ExactPeriodic,
    /// Suprema and infima only cover the available window.
    WindowLimited,
}

/// Terminal candidate `X_t`.
pub fn terminal_candidate(lp: &LiftedProblem, t: usize) -> Result<SpdMatrix> {
    let step = lp.step(t)?;
    let bbt = &step.b * step.b.transpose();
    let chol = linalg::cholesky(&bbt, "B̃B̃ᵀ").map_err(|_| Error::MarginViolation {
        margin: "b_min",
        value: linalg::lambda_min(&bbt).unwrap_or(0.0),
        step: t,
    })?;
    // minimum-norm deadbeat input gain: w = −B̃ᵀ(B̃B̃ᵀ)⁻¹Ã χ
    let deadbeat = step.b.transpose() * chol.solve(&step.a);
    let x = &step.q + deadbeat.transpose() * &step.r * &deadbeat;
    SpdMatrix::from_symmetric(x)
}

/// Lifted indices a quantity ranging over "all t" has to be evaluated on,
/// given that index `t + reach` must still be available.
fn index_range(lp: &LiftedProblem, reach: usize) -> Result<std::ops::Range<usize>> {
    if lp.is_periodic() {
        return Ok(0..lp.len());
    }
    if lp.len() <= reach {
        return Err(Error::InsufficientPreview {
            required: reach + 1,
            available: lp.len(),
        });
    }
    Ok(0..lp.len() - reach)
}

/// `X̂_s = 𝓡_s ∘ ⋯ ∘ 𝓡_{s+T−2}(X_{s+T−1})`; equals `X_s` for `T = 1`.
pub fn hat_x(lp: &LiftedProblem, horizon: usize, s: usize) -> Result<SpdMatrix> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let terminal = terminal_candidate(lp, s + horizon - 1)?;
    riccati_compose(lp, s, &terminal, horizon - 1)
}

/// `X̂_s` for `s ∈ [t0, t1]`.
pub fn hat_x_sequence(lp: &LiftedProblem, horizon: usize, t0: usize, t1: usize) -> Result<Vec<SpdMatrix>> {
    (t0..=t1).map(|s| hat_x(lp, horizon, s)).collect()
}

/// `δ̄ = √n · log(sup_s ‖X_s‖₂ / λ_min(Q̃_s))`, an upper bound on
/// `δ(X_s, P_s)` that needs no knowledge of `P_s`.
///
/// In window mode the supremum runs over `s ≥ horizon`.
pub fn delta_bar(lp: &LiftedProblem, horizon: usize) -> Result<f64> {
    let range = if lp.is_periodic() {
        0..lp.len()
    } else {
        if horizon >= lp.len() {
            return Err(Error::InsufficientPreview {
                required: horizon + 1,
                available: lp.len(),
            });
        }
        horizon..lp.len()
    };
    let mut worst: f64 = 1.0;
    for s in range {
        let x = terminal_candidate(lp, s)?;
        let qmin = linalg::lambda_min(&lp.step(s)?.q)?;
        worst = worst.max(x.norm2()? / qmin);
    }
    Ok((lp.n() as f64).sqrt() * worst.ln())
}

/// The constants entering the performance-loss bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    /// upper bound on `sup_t ‖𝓡_t(X̂_{t+1})‖₂`
    pub omega_max: f64,
    /// lower bound on `inf_t λ_min(𝓡_t(X̂_{t+1}))`
    pub omega_min: f64,
    /// lower bound on `inf_t λ_min(Q̃_t + K_tᵀR̃_tK_t)`
    pub lambda_min: f64,
    /// upper bound on `sup_t ‖P_t‖₂`
    pub lambda_max: f64,
    pub delta_bar: f64,
    pub zeta_bar: f64,
    pub eps_min: f64,
}

impl CertificateConstants {
    pub fn rho_bar(&self) -> f64 {
        self.zeta_bar / (self.zeta_bar + self.eps_min)
    }

    /// `(λ̄/λ̲)(ω̄/ω̲)ω̄`
    pub fn loss_scale(&self) -> f64 {
        self.lambda_max / self.lambda_min * (self.omega_max / self.omega_min) * self.omega_max
    }

    /// Coefficient `c` in `β(ξ) ≤ c |ξ|²` for horizon `T`.
    pub fn beta_bound(&self, horizon: usize) -> f64 {
        let exponent = self.rho_bar().powi(horizon.saturating_sub(1) as i32) * self.delta_bar;
        self.loss_scale() * exponent.exp_m1()
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("omega_max", self.omega_max),
            ("omega_min", self.omega_min),
            ("lambda_min", self.lambda_min),
            ("lambda_max", self.lambda_max),
            ("zeta_bar", self.zeta_bar),
            ("eps_min", self.eps_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.delta_bar >= 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta_bar must be non-negative and finite, got {}",
                self.delta_bar
            )));
        }
        Ok(())
    }
}

/// Conservative constants that do not depend on the horizon:
/// `ω̄, λ̄ ≤ sup_t ‖X_t‖₂` and `ω̲, λ̲ ≥ inf_t λ_min(Q̃_t)`.
pub fn surrogate_constants(lp: &LiftedProblem, cc: &ContractionConstants) -> Result<CertificateConstants> {
    let mut x_sup: f64 = 0.0;
    for t in index_range(lp, 0)? {
        x_sup = x_sup.max(terminal_candidate(lp, t)?.norm2()?);
    }
    let q_min = lp.margins().q_min;
    Ok(CertificateConstants {
        omega_max: x_sup,
        omega_min: q_min,
        lambda_min: q_min,
        lambda_max: x_sup,
        delta_bar: delta_bar(lp, 0)?,
        zeta_bar: cc.zeta_bar,
        eps_min: cc.eps_min,
    })
}

/// Smallest horizon `T ≥ 1` with `β_bound(T) ≤ beta`, i.e.
///
/// ```text
/// T ≥ log( log(1 + β̄ λ̲ ω̲ / (λ̄ ω̄²)) / δ̄ ) / log ρ̄ + 1
/// ```
pub fn horizon_for_tolerance(c: &CertificateConstants, beta: f64) -> Result<usize> {
    horizon_for_tolerance_capped(c, beta, DEFAULT_T_MAX)
}

/// [`horizon_for_tolerance`] clamped to `[1, t_max]`. When the clamp is
/// active the returned horizon may not meet the tolerance; compare
/// `beta_bound` of the result against `beta`.
pub fn horizon_for_tolerance_capped(c: &CertificateConstants, beta: f64, t_max: usize) -> Result<usize> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss tolerance must be positive, got {beta}"
        )));
    }
    if t_max == 0 {
        return Err(Error::InvalidArgument("horizon cap must be at least 1".into()));
    }
    c.validate()?;
    let rho = c.rho_bar();
    if !(rho < 1.0) {
        return Err(Error::certification(
            format!("contraction rate {rho} is not below 1"),
            None,
        ));
    }
    let budget = (beta / c.loss_scale()).ln_1p();
    if c.delta_bar <= budget {
        return Ok(1);
    }
    let raw = (budget / c.delta_bar).ln() / rho.ln() + 1.0;
    if !(raw < t_max as f64) {
        return Ok(t_max);
    }
    let mut horizon = (raw.ceil() as usize).clamp(1, t_max);
    while horizon > 1 && c.beta_bound(horizon - 1) <= beta {
        horizon -= 1;
    }
    while horizon < t_max && c.beta_bound(horizon) > beta {
        horizon += 1;
    }
    Ok(horizon)
}

/// Certificate for a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub d: usize,
    pub horizon: usize,
    pub omega_max: f64,
    pub omega_min: f64,
    pub lambda_min: f64,
    pub lambda_max_ub: f64,
    pub delta_bar: f64,
    pub zeta_bar: f64,
    pub eps_min: f64,
    pub rho_bar: f64,
    /// `β(ξ) ≤ beta_bound · |ξ|²`
    pub beta_bound: f64,
    /// `ω̄/ω̲` in the state envelope.
    pub envelope_ratio: f64,
    /// `1 − λ̲/ω̄` in the state envelope.
    pub decay: f64,
    pub mode: CertificateMode,
    /// `min_t λ_min(X̂_t − 𝓡_t(X̂_{t+1})) / ‖X̂_t‖₂`; non-negative up to rounding.
    pub stability_margin: f64,
    /// `min_t λ_min(X̂_t − P̂_t)`, checked against the truncation slack.
    pub domination_margin: Option<f64>,
}

impl Certificate {
    pub fn constants(&self) -> CertificateConstants {
        CertificateConstants {
            omega_max: self.omega_max,
            omega_min: self.omega_min,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max_ub,
            delta_bar: self.delta_bar,
            zeta_bar: self.zeta_bar,
            eps_min: self.eps_min,
        }
    }

    /// Right-hand side of the state envelope `|x̃_t|² ≤ ratio · decay^t · |x̃₀|²`.
    pub fn envelope(&self, t: usize, x0_sq: f64) -> f64 {
        self.envelope_ratio * self.decay.powi(t as i32) * x0_sq
    }
}

/// Certificate for horizon `T` without the domination check against `P̂`.
pub fn certificate_for_horizon(lp: &LiftedProblem, horizon: usize, cc: &ContractionConstants) -> Result<Certificate> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let tol = *lp.tolerances();
    let range = index_range(lp, horizon)?;
    // X̂_s for s in range plus one
    let hat: Vec<SpdMatrix> = (range.start..=range.end)
        .map(|s| hat_x(lp, horizon, s))
        .collect::<Result<_>>()?;

    let mut omega_max: f64 = 0.0;
    let mut omega_inf = f64::INFINITY;
    let mut lambda_inf = f64::INFINITY;
    let mut x_sup: f64 = 0.0;
    let mut stability_margin = f64::INFINITY;
    for t in range.clone() {
        let step = lp.step(t)?;
        let next = &hat[t + 1 - range.start];
        let w = riccati_apply(lp, t, next.matrix())?;
        let w_eig = w.eigenvalues()?;
        omega_max = omega_max.max(w_eig.max());
        omega_inf = omega_inf.min(w_eig.min());

        let k = feedback_gain(step, next)?;
        let closed = symmetrize(&(&step.q + k.transpose() * &step.r * &k));
        lambda_inf = lambda_inf.min(linalg::lambda_min(&closed)?);

        x_sup = x_sup.max(terminal_candidate(lp, t)?.norm2()?);

        let current = &hat[t - range.start];
        let scale = current.norm2()?;
        let margin = linalg::lambda_min(&(current.matrix() - w.matrix()))? / scale;
        stability_margin = stability_margin.min(margin);
        if margin < -tol.psd_tol {
            return Err(Error::certification(
                format!("terminal penalties violate X̂_t ⪰ 𝓡_t(X̂_(t+1)) (relative margin {margin:.3e})"),
                Some(t),
            ));
        }
    }

    let omega_min = omega_inf.max(lp.margins().q_min);
    let lambda_min = lambda_inf;
    if !(lambda_min > 0.0) {
        return Err(Error::certification(
            format!("λ̲ = {lambda_min:.3e} is not positive"),
            None,
        ));
    }
    if lambda_min > omega_max * (1.0 + 1e-9) {
        return Err(Error::certification(
            format!("λ̲ = {lambda_min:.6e} exceeds ω̄ = {omega_max:.6e}"),
            None,
        ));
    }
    let dbar = delta_bar(lp, if lp.is_periodic() { 0 } else { horizon })?;
    let constants = CertificateConstants {
        omega_max,
        omega_min,
        lambda_min,
        lambda_max: x_sup,
        delta_bar: dbar,
        zeta_bar: cc.zeta_bar,
        eps_min: cc.eps_min,
    };
    constants
        .validate()
        .map_err(|e| Error::certification(e.to_string(), None))?;
    let rho_bar = constants.rho_bar();
    if !(rho_bar < 1.0) {
        return Err(Error::certification(format!("ρ̄ = {rho_bar} is not below 1"), None));
    }
    let beta_bound = constants.beta_bound(horizon);
    if !(beta_bound >= 0.0 && beta_bound.is_finite()) {
        return Err(Error::certification(
            format!("loss bound {beta_bound} is not finite"),
            None,
        ));
    }

    Ok(Certificate {
        d: lp.d(),
        horizon,
        omega_max,
        omega_min,
        lambda_min,
        lambda_max_ub: x_sup,
        delta_bar: dbar,
        zeta_bar: cc.zeta_bar,
        eps_min: cc.eps_min,
        rho_bar,
        beta_bound,
        envelope_ratio: omega_max / omega_min,
        decay: (1.0 - lambda_min / omega_max).clamp(0.0, 1.0),
        mode: if lp.is_periodic() {
            CertificateMode::ExactPeriodic
        } else {
            CertificateMode::WindowLimited
        },
        stability_margin,
        domination_margin: None,
    })
}

/// Certificate for horizon `T`, additionally checking `X̂_t ⪰ P̂_t` up to the
/// truncation slack of `ra` wherever both are available.
pub fn build_certificate(lp: &LiftedProblem, horizon: usize, ra: &RiccatiApprox) -> Result<Certificate> {
    let cc = contraction_constants(lp)?;
    build_certificate_with(lp, horizon, ra, &cc)
}

pub fn build_certificate_with(
    lp: &LiftedProblem,
    horizon: usize,
    ra: &RiccatiApprox,
    cc: &ContractionConstants,
) -> Result<Certificate> {
    let mut cert = certificate_for_horizon(lp, horizon, cc)?;
    let tol = *lp.tolerances();
    let mut worst = f64::INFINITY;
    for s in ra.t0..=ra.t1 {
        let Some(p_hat) = ra.at(s) else { continue };
        let x = match hat_x(lp, horizon, s) {
            Ok(x) => x,
            Err(Error::IndexOutOfWindow { .. }) => continue,
            Err(e) => return Err(e),
        };
        let gap = linalg::lambda_min(&(x.matrix() - p_hat.matrix()))?;
        let slack = ra.spectral_gap(s)? + tol.psd_tol * x.norm2()?;
        if gap < -slack {
            return Err(Error::certification(
                format!(
                    "terminal penalty does not dominate the Riccati solution (λ_min = {gap:.3e}, slack {slack:.3e})"
                ),
                Some(s),
            ));
        }
        worst = worst.min(gap);
    }
    cert.domination_margin = worst.is_finite().then_some(worst);
    Ok(cert)
}

/// Result of horizon selection for a loss tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub beta: f64,
    pub horizon: usize,
    /// Horizon obtained from the horizon-independent surrogate constants.
    pub surrogate_horizon: usize,
    /// Whether `certificate.beta_bound ≤ beta`; false only when the horizon
    /// cap was reached.
    pub certified: bool,
    pub certificate: Certificate,
}

/// Picks the horizon for loss tolerance `beta`.
///
/// A first horizon comes from [`surrogate_constants`], which are valid for
/// every horizon. The exact constants at that horizon are then used once to
/// propose a shorter horizon, which is accepted only if its own certificate
/// meets the tolerance. Both horizons are clamped to `t_max`.
///
/// With `ra` present every certificate is also checked for domination of the
/// approximate Riccati solution.
pub fn synthesize(lp: &LiftedProblem, beta: f64, t_max: usize, ra: Option<&RiccatiApprox>) -> Result<Synthesis> {
    let cc = contraction_constants(lp)?;
    let surrogate = surrogate_constants(lp, &cc)?;
    let surrogate_horizon = horizon_for_tolerance_capped(&surrogate, beta, t_max)?;
    let certify = |horizon| match ra {
        Some(ra) => build_certificate_with(lp, horizon, ra, &cc),
        None => certificate_for_horizon(lp, horizon, &cc),
    };
    let mut certificate = certify(surrogate_horizon)?;
    let proposal = horizon_for_tolerance_capped(&certificate.constants(), beta, t_max)?;
    if proposal < surrogate_horizon {
        let tightened = certify(proposal)?;
        if tightened.beta_bound <= beta {
            certificate = tightened;
        }
    }
    Ok(Synthesis {
        beta,
        horizon: certificate.horizon,
        surrogate_horizon,
        certified: certificate.beta_bound <= beta,
        certificate,
    })
}

/// Terminal candidates over one period (or the window).
pub fn terminal_candidates(lp: &LiftedProblem) -> Result<Vec<SpdMatrix>> {
    (0..lp.len()).map(|t| terminal_candidate(lp, t)).collect()
}
