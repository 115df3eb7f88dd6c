//! Dense complex linear algebra sized for operators on small Hilbert spaces.
//!
//! Everything here is a pure function of its inputs. Matrices are stored
//! row-major and serialize as an array of rows whose entries are `[re, im]`
//! pairs.

mod eigen;
mod matrix;
mod real;
mod simdiag;
mod solve;
mod svd;

pub use eigen::{herm_eigen, herm_eigen_with, HermEigen, JacobiOptions};
pub use matrix::{CMatrix, C64};
pub use real::RMatrix;
pub use simdiag::{simultaneous_diagonalize, SimDiag, SimDiagOptions};
pub use solve::{lu_determinant, lu_solve};
pub use svd::{pinv, svd, Svd};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("family does not commute (max commutator {residual:.3e})")]
    NotCommuting { residual: f64 },
    #[error("could not resolve degenerate joint eigenspaces (off-diagonal {residual:.3e})")]
    DegeneracyUnresolved { residual: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("non-finite entry in matrix")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Frobenius norm of the commutator `AB - BA`.
pub fn comm_norm(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch(format!(
            "commutator of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((&(a * b) - &(b * a)).fro_norm())
}

/// `exp(iH)` for Hermitian `H`, through its eigendecomposition.
pub fn unitary_exp(h: &CMatrix) -> Result<CMatrix> {
    let eig = herm_eigen(h)?;
    let phases: Vec<C64> = eig.values.iter().map(|&v| C64::from_polar(1.0, v)).collect();
    Ok(&(&eig.vectors * &CMatrix::from_diag(&phases)) * &eig.vectors.adjoint())
}
