//! Small dense helpers shared by the numerical modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

const EIGEN_MAX_ITER: usize = 10_000;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Crude condition estimate used only for diagnostics.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let diag_max = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let diag_min = m.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if diag_min > 0.0 {
        diag_max / diag_min
    } else {
        f64::INFINITY
    }
}

/// Eigendecomposition of the symmetric part of `m`.
pub(crate) fn sym_eigen(m: &DMatrix<f64>, context: &str) -> Result<SymmetricEigen<f64, Dyn>> {
    if !all_finite(m) {
        return Err(Error::NonFinite);
    }
    SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::numerical(context, condition_estimate(m)))
}

pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>, context: &str) -> Result<DVector<f64>> {
    Ok(sym_eigen(m, context)?.eigenvalues)
}

pub(crate) fn lambda_min(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m, "lambda_min")?.min())
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !all_finite(m) {
        return Err(Error::NonFinite);
    }
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, EIGEN_MAX_ITER)
        .map(|svd| svd.singular_values)
        .ok_or_else(|| Error::numerical("singular value decomposition", f64::INFINITY))
}

/// Induced 2-norm.
pub(crate) fn norm2(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.max())
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>, rank_factor: f64) -> Result<usize> {
    let sv = singular_values(m)?;
    if sv.is_empty() {
        return Ok(0);
    }
    let tol = rank_factor * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * sv.max();
    Ok(sv.iter().filter(|&&s| s > tol).count())
}

pub(crate) fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::numerical(context, condition_estimate(m)))
}

/// Solves `A X = B` with partial-pivoting LU.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::numerical(context, condition_estimate(a)))
}

/// Square root of a symmetric positive semi-definite matrix, clamping
/// negative eigenvalues to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m, "psd square root")?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose())))
}

pub(crate) fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `xᵀ M x`.
pub(crate) fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub(crate) fn check_square(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}
