//! Receding-horizon controllers for non-stationary discrete-time LQR problems.
//!
//! The pipeline is:
//!
//! 1. [`lifting`] turns time-varying base data `(A_k, B_k, Q_k, R_k)` into a
//!    `d`-step lifted problem that is one-step controllable and observable.
//! 2. [`riccati`] provides the lifted Riccati operator, its Riemannian
//!    contraction rates and a certified approximation of the infinite-horizon
//!    solution.
//! 3. [`certificate`] builds the terminal penalties, the stability and
//!    performance-loss constants, and picks a prediction horizon for a
//!    requested loss tolerance.
//! 4. [`closed_loop`] runs the resulting policy, maps it back to the base
//!    time scale and measures the realized loss.
//!
//! [`spd`] holds the matrix geometry everything else is measured in, [`oracle`]
//! is a dense brute-force finite-horizon solver used for cross-checking, and
//! [`workbench`] covers file formats, scenario generation and batch
//! verification.

// `!(x > 0.0)` is used on purpose so that NaN fails the check too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod closed_loop;
mod error;
pub mod lifting;
pub(crate) mod linalg;
pub mod oracle;
pub mod riccati;
pub mod spd;
mod tolerance;
pub mod workbench;

pub use error::{Error, ErrorClass, Result};
pub use tolerance::Tolerances;

pub use certificate::{Certificate, CertificateConstants, CertificateMode};
pub use closed_loop::{ClosedLoopReport, PolicyRealization};
pub use lifting::{HorizonMode, LiftedProblem, ProblemData};
pub use riccati::{ContractionConstants, RiccatiApprox};
pub use spd::SpdMatrix;
