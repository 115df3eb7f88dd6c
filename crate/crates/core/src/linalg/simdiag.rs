use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::CMatrix;
use super::{comm_norm, herm_eigen, LinalgError, Result};

#[derive(Debug, Clone, Copy)]
pub struct SimDiagOptions {
    pub seed: u64,
    pub retries: usize,
    /// Commutator gate, relative to `1 + ‖A_l‖_F ‖A_m‖_F`.
    pub comm_tol: f64,
    /// Off-diagonal gate per conjugated member, relative to `1 + ‖A_l‖_F`.
    pub diag_tol: f64,
}

impl Default for SimDiagOptions {
    fn default() -> Self {
        Self { seed: 0x5eed_d1a6, retries: 5, comm_tol: 1e-8, diag_tol: 1e-8 }
    }
}

/// Common eigenbasis of a commuting Hermitian family.
#[derive(Debug, Clone)]
pub struct SimDiag {
    pub unitary: CMatrix,
    /// `joint_values[s][l]` is the `s`-th diagonal entry of `U† A_l U`.
    pub joint_values: Vec<Vec<f64>>,
}

pub fn simultaneous_diagonalize(family: &[CMatrix], opts: SimDiagOptions) -> Result<SimDiag> {
    let first = family
        .first()
        .ok_or_else(|| LinalgError::DimensionMismatch("empty family".into()))?;
    let n = first.rows();
    for a in family {
        if !a.is_square() || a.rows() != n {
            return Err(LinalgError::DimensionMismatch(format!("family member {:?}, expected {n}x{n}", a.shape())));
        }
        let r = a.hermitian_residual();
        if r > 1e-10 * (1.0 + a.fro_norm()) {
            return Err(LinalgError::NotHermitian { residual: r });
        }
    }
    let mut worst = 0.0f64;
    for (l, a) in family.iter().enumerate() {
        for b in &family[l + 1..] {
            let r = comm_norm(a, b)? / (1.0 + a.fro_norm() * b.fro_norm());
            worst = worst.max(r);
        }
    }
    if worst > opts.comm_tol {
        return Err(LinalgError::NotCommuting { residual: worst });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..=opts.retries {
        let u = herm_eigen(&random_combination(family, &mut rng))?.vectors;
        if off_diagonal_excess(family, &u, opts.diag_tol).is_none() {
            return Ok(assemble(family, u));
        }
    }

    let u = refine(family, &mut rng, 0)?;
    match off_diagonal_excess(family, &u, opts.diag_tol) {
        None => Ok(assemble(family, u)),
        Some(residual) => Err(LinalgError::DegeneracyUnresolved { residual }),
    }
}

fn random_combination(family: &[CMatrix], rng: &mut ChaCha8Rng) -> CMatrix {
    let n = family[0].rows();
    let mut h = CMatrix::zeros(n, n);
    for a in family {
        let g: f64 = StandardNormal.sample(rng);
        h += &(a * g);
    }
    h
}

/// Worst relative off-diagonal mass, or `None` when all members pass.
fn off_diagonal_excess(family: &[CMatrix], u: &CMatrix, tol: f64) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for a in family {
        let off = a.congruence(u).off_diag_norm();
        if off > tol * (1.0 + a.fro_norm()) {
            worst = Some(worst.map_or(off, |w: f64| w.max(off)));
        }
    }
    worst
}

/// Diagonalize a random combination, then recurse into each cluster of
/// nearly equal eigenvalues with the family restricted to that cluster.
fn refine(family: &[CMatrix], rng: &mut ChaCha8Rng, depth: usize) -> Result<CMatrix> {
    let n = family[0].rows();
    let eig = herm_eigen(&random_combination(family, rng))?;
    if n == 1 || depth > 8 {
        return Ok(eig.vectors);
    }
    let scale = 1.0 + eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-7 * scale;
    let mut out = CMatrix::zeros(n, n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.values[end] - eig.values[end - 1] <= tol {
            end += 1;
        }
        let idx: Vec<usize> = (start..end).collect();
        let q = eig.vectors.select_cols(&idx);
        let block = if idx.len() > 1 {
            let sub: Vec<CMatrix> = family.iter().map(|a| a.congruence(&q).hermitian_part()).collect();
            &q * &refine(&sub, rng, depth + 1)?
        } else {
            q
        };
        for (k, &j) in idx.iter().enumerate() {
            out.set_col(j, &block.col(k));
        }
        start = end;
    }
    Ok(out)
}

fn assemble(family: &[CMatrix], unitary: CMatrix) -> SimDiag {
    let n = unitary.cols();
    let conj: Vec<CMatrix> = family.iter().map(|a| a.congruence(&unitary)).collect();
    let joint_values = (0..n).map(|s| conj.iter().map(|c| c[(s, s)].re).collect()).collect();
    SimDiag { unitary, joint_values }
}
