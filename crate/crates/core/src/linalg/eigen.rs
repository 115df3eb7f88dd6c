use super::matrix::{CMatrix, C64};
use super::{LinalgError, Result};

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermEigen {
    pub values: Vec<f64>,
    /// Columns are orthonormal eigenvectors matching `values`.
    pub vectors: CMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct JacobiOptions {
    pub max_sweeps: usize,
    /// Hermiticity gate, relative to `1 + ‖A‖_F`.
    pub herm_tol: f64,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self { max_sweeps: 100, herm_tol: 1e-10 }
    }
}

pub fn herm_eigen(a: &CMatrix) -> Result<HermEigen> {
    herm_eigen_with(a, JacobiOptions::default())
}

/// Cyclic complex Jacobi. Each rotation first removes the phase of the
/// pivot `a_pq`, then applies the real symmetric Jacobi rotation.
pub fn herm_eigen_with(a: &CMatrix, opts: JacobiOptions) -> Result<HermEigen> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!("eigendecomposition of {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let norm = a.fro_norm();
    let residual = a.hermitian_residual();
    if residual > opts.herm_tol * (1.0 + norm) {
        return Err(LinalgError::NotHermitian { residual });
    }
    let n = a.rows();
    let mut m = a.hermitian_part();
    let mut v = CMatrix::identity(n);
    let target = f64::EPSILON * (n as f64) * norm;

    let mut converged = norm == 0.0 || m.off_diag_norm() <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == opts.max_sweeps {
            return Err(LinalgError::NoConvergence { sweeps, off: m.off_diag_norm() });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        converged = m.off_diag_norm() <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    Ok(HermEigen {
        values: order.iter().map(|&i| diag[i]).collect(),
        vectors: v.select_cols(&order),
    })
}

fn rotate(m: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let phase = apq / r;
    let theta = (aqq - app) / (2.0 * r);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    if t == 0.0 {
        return;
    }
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let e = phase.conj();
    // G restricted to (p, q).
    let gpp = C64::new(c, 0.0);
    let gpq = C64::new(s, 0.0);
    let gqp = e * -s;
    let gqq = e * c;

    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = mkp * gpp + mkq * gqp;
        m[(k, q)] = mkp * gpq + mkq * gqq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = gpp.conj() * mpk + gqp.conj() * mqk;
        m[(q, k)] = gpq.conj() * mpk + gqq.conj() * mqk;
    }
    m[(p, p)] = C64::new(app - t * r, 0.0);
    m[(q, q)] = C64::new(aqq + t * r, 0.0);
    m[(p, q)] = C64::new(0.0, 0.0);
    m[(q, p)] = C64::new(0.0, 0.0);
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * gpp + vkq * gqp;
        v[(k, q)] = vkp * gpq + vkq * gqq;
    }
}
