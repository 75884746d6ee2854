//! Dense finite-horizon solver used to cross-check the Riccati code path.
//!
//! The `T`-step cost with terminal penalty `X` is written as one quadratic in
//! the stacked input `w = (w_0, …, w_{T−1})`. With stacked states
//! `Z = Sχ + Mw` and block-diagonal weights,
//!
//! ```text
//! L(w) = wᵀHw + 2gᵀw + c,   H = R̄ + MᵀQ̄M,   g = MᵀQ̄Sχ,   c = χᵀSᵀQ̄Sχ
//! ```
//!
//! and the minimiser is `w* = −H⁻¹g`. Nothing here calls into the Riccati
//! module.

use nalgebra::{DMatrix, DVector};

use crate::lifting::LiftedProblem;
use crate::linalg::{self, symmetrize};
use crate::spd::SpdMatrix;
use crate::{Error, Result};

/// Default cap on the stacked input dimension `T·md`.
pub const STACK_MAX: usize = 2000;

#[derive(Debug, Clone)]
pub struct StackedLq {
    pub t: usize,
    pub horizon: usize,
    pub chi: DVector<f64>,
    /// Maps `χ` to the stacked states `z_t, …, z_{t+T}`.
    pub s: DMatrix<f64>,
    /// Maps `w` to the stacked states.
    pub m: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl StackedLq {
    /// `L(w)`
    pub fn value_at(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.h * w)[(0, 0)] + 2.0 * self.g.dot(w) + self.c
    }

    /// Stacked states for input `w`.
    pub fn states(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.s * &self.chi + &self.m * w
    }
}

pub fn build_stacked(
    lp: &LiftedProblem,
    t: usize,
    horizon: usize,
    chi: &DVector<f64>,
    x: &SpdMatrix,
) -> Result<StackedLq> {
    build_stacked_capped(lp, t, horizon, chi, x, STACK_MAX)
}

pub fn build_stacked_capped(
    lp: &LiftedProblem,
    t: usize,
    horizon: usize,
    chi: &DVector<f64>,
    x: &SpdMatrix,
    cap: usize,
) -> Result<StackedLq> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, p) = (lp.n(), lp.input_dim());
    if chi.len() != n {
        return Err(Error::dims("initial state", n, chi.len()));
    }
    if x.dim() != n {
        return Err(Error::dims("terminal penalty", n, x.dim()));
    }
    let size = horizon * p;
    if size > cap {
        return Err(Error::StackTooLarge { size, cap });
    }

    let rows = (horizon + 1) * n;
    let mut s = DMatrix::zeros(rows, n);
    let mut m = DMatrix::zeros(rows, size);
    let mut q_bar = DMatrix::zeros(rows, rows);
    let mut r_bar = DMatrix::zeros(size, size);

    s.view_mut((0, 0), (n, n)).fill_with_identity();
    for j in 0..horizon {
        let step = lp.step(t + j)?;
        // z_{j+1} = Ã z_j + B̃ w_j, row block by row block
        let next_s = &step.a * s.view((j * n, 0), (n, n));
        s.view_mut(((j + 1) * n, 0), (n, n)).copy_from(&next_s);
        let next_m = &step.a * m.view((j * n, 0), (n, size));
        m.view_mut(((j + 1) * n, 0), (n, size)).copy_from(&next_m);
        m.view_mut(((j + 1) * n, j * p), (n, p)).copy_from(&step.b);

        q_bar.view_mut((j * n, j * n), (n, n)).copy_from(&step.q);
        r_bar.view_mut((j * p, j * p), (p, p)).copy_from(&step.r);
    }
    q_bar.view_mut((horizon * n, horizon * n), (n, n)).copy_from(x.matrix());

    let qm = &q_bar * &m;
    let h = symmetrize(&(r_bar + m.transpose() * &qm));
    let s_chi = &s * chi;
    let g = qm.transpose() * &s_chi;
    let c = s_chi.dot(&(&q_bar * &s_chi));
    Ok(StackedLq {
        t,
        horizon,
        chi: chi.clone(),
        s,
        m,
        h,
        g,
        c,
    })
}

/// Minimiser and minimum of the stacked problem.
pub fn solve_stacked(sq: &StackedLq) -> Result<(DVector<f64>, f64)> {
    let chol = linalg::cholesky(&sq.h, "stacked Hessian")?;
    let rhs = -&sq.g;
    let mut w = chol.solve(&rhs);
    let residual = &rhs - &sq.h * &w;
    w += chol.solve(&residual);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let value = sq.value_at(&w);
    Ok((w, value))
}

/// First input block `w*_0` of the minimiser.
pub fn first_block(sq: &StackedLq, w: &DVector<f64>) -> DVector<f64> {
    let p = w.len() / sq.horizon;
    w.rows(0, p).into_owned()
}
