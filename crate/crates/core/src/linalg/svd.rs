use super::matrix::{vec_norm, CMatrix, C64};
use super::{herm_eigen, Result};

/// Thin singular value decomposition `A = U diag(σ) V†`, σ descending.
///
/// Built from the eigendecomposition of `A†A`; left vectors are recovered
/// as `A v / σ` and are only meaningful for σ > 0. Singular values below
/// roughly `sqrt(ε)·σ_max` are not resolved accurately.
#[derive(Debug, Clone)]
pub struct Svd {
    pub sigma: Vec<f64>,
    /// `cols × k` right singular vectors, one column per σ.
    pub v: CMatrix,
    /// `rows × k` left singular vectors (zero columns where σ = 0).
    pub u: CMatrix,
}

pub fn svd(a: &CMatrix) -> Result<Svd> {
    let gram = &a.adjoint() * a;
    let eig = herm_eigen(&gram)?;
    let k = a.cols();
    let order: Vec<usize> = (0..k).rev().collect();
    let v = eig.vectors.select_cols(&order);
    let mut sigma = Vec::with_capacity(k);
    let mut u = CMatrix::zeros(a.rows(), k);
    for j in 0..k {
        let av = a.matvec(&v.col(j));
        let s = vec_norm(&av);
        sigma.push(s);
        if s > 0.0 {
            let col: Vec<C64> = av.iter().map(|z| z / s).collect();
            u.set_col(j, &col);
        }
    }
    Ok(Svd { sigma, v, u })
}

/// Moore–Penrose pseudoinverse; singular values at or below
/// `tol · σ_max` are treated as zero.
pub fn pinv(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    let d = svd(a)?;
    let smax = d.sigma.first().copied().unwrap_or(0.0);
    let mut out = CMatrix::zeros(a.cols(), a.rows());
    if smax == 0.0 {
        return Ok(out);
    }
    for (j, &s) in d.sigma.iter().enumerate() {
        if s > tol * smax {
            let vj = d.v.col(j);
            let uj = d.u.col(j);
            out += &(&CMatrix::outer(&vj, &uj) * (1.0 / s));
        }
    }
    Ok(out)
}
