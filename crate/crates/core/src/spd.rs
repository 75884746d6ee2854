//! Functions on symmetric positive definite matrices.
//!
//! Everything here works on the symmetric part of its input and uses
//! symmetric eigensolvers. The Riemannian distance
//!
//! ```text
//! δ(Y, Z) = sqrt(Σᵢ log² λᵢ),   λᵢ the eigenvalues of Y Z⁻¹
//! ```
//!
//! is evaluated through the congruence `L⁻¹ Y L⁻ᵀ` with `Z = L Lᵀ`, which has
//! the same spectrum as `Y Z⁻¹` but is symmetric, so the eigenvalues are real
//! by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, symmetrize};
use crate::{Error, Result, Tolerances};

/// A symmetric positive definite matrix.
///
/// The stored matrix is exactly symmetric; construction fails if the input is
/// asymmetric beyond `sym_tol` or has a non-positive eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerances(m, &Tolerances::default())
    }

    pub fn with_tolerances(m: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        linalg::check_square(&m, "SpdMatrix")?;
        if m.nrows() == 0 {
            return Err(Error::dims("SpdMatrix", "dimension >= 1", 0));
        }
        if !linalg::all_finite(&m) {
            return Err(Error::NonFinite);
        }
        let scale = linalg::norm2(&m)?;
        let asym = linalg::norm2(&(&m - m.transpose()))?;
        if asym > tol.sym_tol * scale {
            return Err(Error::NotSymmetric {
                asymmetry: if scale > 0.0 { asym / scale } else { f64::INFINITY },
            });
        }
        Self::from_symmetric(symmetrize(&m))
    }

    /// Symmetrizes `m` and checks positivity, skipping the asymmetry test.
    /// Intended for matrices that are symmetric up to rounding by construction.
    pub(crate) fn from_symmetric(m: DMatrix<f64>) -> Result<Self> {
        let m = symmetrize(&m);
        let min_eigenvalue = linalg::lambda_min(&m)?;
        if !(min_eigenvalue > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_symmetric(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        linalg::sym_eigenvalues(&self.0, "SpdMatrix eigenvalues")
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.min())
    }

    /// Spectral norm, which for an SPD matrix is its largest eigenvalue.
    pub fn norm2(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.max())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::from_symmetric(&self.0 * c)
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.0, x)
    }

    /// Applies `f` to the eigenvalues: `V f(Λ) Vᵀ`.
    fn spectral_map(&self, context: &str, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
        let eig = linalg::sym_eigen(&self.0, context)?;
        if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::numerical(
                format!("{context}: computed eigenvalue {bad:.3e}"),
                eig.eigenvalues.max() / eig.eigenvalues.min().abs(),
            ));
        }
        let mapped = eig.eigenvalues.map(f);
        let v = &eig.eigenvectors;
        Ok(symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose())))
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Principal square root.
pub fn spd_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    m.spectral_map("spd_sqrt", f64::sqrt).map(SpdMatrix)
}

/// Inverse of the principal square root.
pub fn spd_inv_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    m.spectral_map("spd_inv_sqrt", |l| 1.0 / l.sqrt()).map(SpdMatrix)
}

/// Principal matrix logarithm; the result is exactly symmetric.
pub fn spd_log(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    m.spectral_map("spd_log", f64::ln)
}

fn check_same_dim(y: &SpdMatrix, z: &SpdMatrix, context: &str) -> Result<()> {
    if y.dim() != z.dim() {
        return Err(Error::dims(context, z.dim(), y.dim()));
    }
    Ok(())
}

/// Eigenvalues of `Y Z⁻¹`, computed as the spectrum of `L⁻¹ Y L⁻ᵀ` where
/// `Z = L Lᵀ` is the Cholesky factorization.
pub fn relative_eigenvalues(y: &SpdMatrix, z: &SpdMatrix) -> Result<DVector<f64>> {
    check_same_dim(y, z, "relative_eigenvalues")?;
    let chol = linalg::cholesky(z.matrix(), "Cholesky factor of Z")?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(y.matrix())
        .ok_or_else(|| Error::numerical("triangular solve with L", linalg::condition_estimate(&l)))?;
    let congruence = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::numerical("triangular solve with L", linalg::condition_estimate(&l)))?;
    linalg::sym_eigenvalues(&congruence, "relative eigenvalues")
}

/// Riemannian distance on the SPD cone.
pub fn riemannian_distance(y: &SpdMatrix, z: &SpdMatrix) -> Result<f64> {
    let lambdas = relative_eigenvalues(y, z)?;
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: bad });
    }
    Ok(lambdas.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// The same distance as [`riemannian_distance`], evaluated as
/// `‖log(Z^{-1/2} Y Z^{-1/2})‖_F` with the eigen-factor square root of `Z`.
pub fn log_congruence_distance(y: &SpdMatrix, z: &SpdMatrix) -> Result<f64> {
    check_same_dim(y, z, "log_congruence_distance")?;
    let zi = spd_inv_sqrt(z)?;
    let inner = SpdMatrix::from_symmetric(zi.matrix() * y.matrix() * zi.matrix())?;
    Ok(spd_log(&inner)?.norm())
}

/// Upper bound `‖Z‖₂ (exp(δ(Y, Z)) − 1)` on `‖Y − Z‖₂`, valid when `Y ⪰ Z`.
pub fn spd_gap_bound(y: &SpdMatrix, z: &SpdMatrix) -> Result<f64> {
    spd_gap_bound_with(y, z, &Tolerances::default())
}

pub fn spd_gap_bound_with(y: &SpdMatrix, z: &SpdMatrix, tol: &Tolerances) -> Result<f64> {
    check_same_dim(y, z, "spd_gap_bound")?;
    let diff = y.matrix() - z.matrix();
    let min_eigenvalue = linalg::lambda_min(&diff)?;
    let scale = y.norm2()?.max(z.norm2()?);
    if min_eigenvalue < -tol.psd_tol * scale {
        return Err(Error::OrderingViolation { min_eigenvalue });
    }
    Ok(z.norm2()? * riemannian_distance(y, z)?.exp_m1())
}
