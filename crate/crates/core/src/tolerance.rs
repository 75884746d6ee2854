use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by the checks in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative symmetry tolerance: `‖M − Mᵀ‖₂ ≤ sym_tol·‖M‖₂`.
    pub sym_tol: f64,
    /// Relative semi-definiteness tolerance, scaled by the spectral norm.
    pub psd_tol: f64,
    /// Relative tolerance for round-trip identities.
    pub rtol: f64,
    /// Smallest admissible singular value of each `A_k`, relative to `max(1, ‖A_k‖₂)`.
    pub inv_tol: f64,
    /// Rank threshold factor: a singular value counts if it exceeds
    /// `rank_factor·max(rows, cols)·ε·σ_max`.
    pub rank_factor: f64,
    /// Lifting margins must exceed this value.
    pub margin_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sym_tol: 1e-10,
            psd_tol: 1e-9,
            rtol: 1e-8,
            inv_tol: 1e-12,
            rank_factor: 1.0,
            margin_tol: 1e-10,
        }
    }
}
