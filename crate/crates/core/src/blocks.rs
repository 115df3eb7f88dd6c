//! Range/null split of a state and the 2×2 block view of operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{herm_eigen, unitary_exp, CMatrix, LinalgError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlocksError {
    #[error(
        "rank is numerically ambiguous: smallest kept eigenvalue {kept:.3e}, \
         largest dropped {dropped:.3e}, threshold {threshold:.1e}"
    )]
    IllDeterminedRank { kept: f64, dropped: f64, threshold: f64 },
    #[error("state has no eigenvalue above the rank threshold")]
    EmptyRange,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, BlocksError>;

/// Largest dropped eigenvalue treated as an exact zero.
const EXACT_ZERO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub tau_rank: f64,
    pub gamma_min: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { tau_rank: 1e-8, gamma_min: 1e4 }
    }
}

#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub r_plus: usize,
    pub r_zero: usize,
    /// Range basis, columns ordered by descending `q`.
    pub v: CMatrix,
    /// Null basis.
    pub y: CMatrix,
    pub q: Vec<f64>,
    pub p_plus: CMatrix,
    pub p_zero: CMatrix,
    /// Largest eigenvalue classified as null (absolute value).
    pub largest_dropped: f64,
}

/// Serializable summary for reports.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSummary {
    pub r_plus: usize,
    pub r_zero: usize,
    pub q: Vec<f64>,
    pub largest_dropped: f64,
    /// `q_max / q_min`.
    pub spectral_condition: f64,
    /// `1 / q_min`, the amplification in the `L_{+0}` formula.
    pub lpz_condition: f64,
}

/// Rotates `col` so that its largest-magnitude entry (first one on ties)
/// is real positive.
fn fix_phase(col: &mut [C64]) {
    let max = col.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if max == 0.0 {
        return;
    }
    let pivot = col.iter().copied().find(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap();
    let phase = pivot.conj() / pivot.norm();
    for z in col.iter_mut() {
        *z *= phase;
    }
}

pub fn decompose(rho: &CMatrix, opts: RankOptions) -> Result<BlockDecomposition> {
    let eig = herm_eigen(rho)?;
    let n = rho.rows();
    let order: Vec<usize> = (0..n).rev().collect();
    let kept: Vec<usize> = order.iter().copied().filter(|&k| eig.values[k] >= opts.tau_rank).collect();
    let dropped: Vec<usize> = order.iter().copied().filter(|&k| eig.values[k] < opts.tau_rank).collect();
    if kept.is_empty() {
        return Err(BlocksError::EmptyRange);
    }
    let smallest_kept = eig.values[*kept.last().unwrap()];
    let largest_dropped = dropped.iter().fold(0.0f64, |m, &k| m.max(eig.values[k].abs()));
    if largest_dropped >= EXACT_ZERO {
        let gap = smallest_kept / largest_dropped;
        let margin = opts.tau_rank / largest_dropped;
        if gap < opts.gamma_min || margin < opts.gamma_min {
            return Err(BlocksError::IllDeterminedRank {
                kept: smallest_kept,
                dropped: largest_dropped,
                threshold: opts.tau_rank,
            });
        }
    }
    let gauge = |idx: &[usize]| {
        let mut m = eig.vectors.select_cols(idx);
        for j in 0..idx.len() {
            let mut c = m.col(j);
            fix_phase(&mut c);
            m.set_col(j, &c);
        }
        m
    };
    let v = gauge(&kept);
    let y = gauge(&dropped);
    let q = kept.iter().map(|&k| eig.values[k]).collect();
    Ok(BlockDecomposition::from_frames(v, y, q, largest_dropped))
}

impl BlockDecomposition {
    pub fn from_frames(v: CMatrix, y: CMatrix, q: Vec<f64>, largest_dropped: f64) -> Self {
        let p_plus = &v * &v.adjoint();
        let p_zero = &y * &y.adjoint();
        Self { r_plus: v.cols(), r_zero: y.cols(), v, y, q, p_plus, p_zero, largest_dropped }
    }

    pub fn dim(&self) -> usize {
        self.v.rows()
    }

    pub fn rho_pp(&self) -> CMatrix {
        CMatrix::from_real_diag(&self.q)
    }

    pub fn summary(&self) -> DecompositionSummary {
        let qmax = self.q.iter().copied().fold(0.0, f64::max);
        let qmin = self.q.iter().copied().fold(f64::INFINITY, f64::min);
        DecompositionSummary {
            r_plus: self.r_plus,
            r_zero: self.r_zero,
            q: self.q.clone(),
            largest_dropped: self.largest_dropped,
            spectral_condition: qmax / qmin,
            lpz_condition: 1.0 / qmin,
        }
    }

    /// Same subspaces in a different gauge: random column phases and
    /// random unitary mixing inside degenerate `q` clusters and the null space.
    pub fn regauged(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random_unitary = |k: usize| {
            let g = CMatrix::from_fn(k, k, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            unitary_exp(&g.hermitian_part().scale(3.0)).expect("Hermitian generator")
        };
        let mut uplus = CMatrix::zeros(self.r_plus, self.r_plus);
        let mut start = 0;
        while start < self.r_plus {
            let mut end = start + 1;
            while end < self.r_plus && (self.q[end - 1] - self.q[end]).abs() <= 1e-12 {
                end += 1;
            }
            let u = random_unitary(end - start);
            for i in start..end {
                for j in start..end {
                    uplus[(i, j)] = u[(i - start, j - start)];
                }
            }
            start = end;
        }
        let uzero = random_unitary(self.r_zero);
        Self::from_frames(&self.v * &uplus, &self.y * &uzero, self.q.clone(), self.largest_dropped)
    }

    /// Rank-drift diagnostic `‖(∂ρ)_00‖_F`.
    pub fn null_block_norm(&self, drho: &CMatrix) -> f64 {
        if self.r_zero == 0 {
            return 0.0;
        }
        drho.congruence(&self.y).fro_norm()
    }
}

/// `O_{jk} = B_j† O B_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockView {
    pub opp: CMatrix,
    pub opz: CMatrix,
    pub ozp: CMatrix,
    pub ozz: CMatrix,
}

impl BlockView {
    pub fn zeros(r_plus: usize, r_zero: usize) -> Self {
        Self {
            opp: CMatrix::zeros(r_plus, r_plus),
            opz: CMatrix::zeros(r_plus, r_zero),
            ozp: CMatrix::zeros(r_zero, r_plus),
            ozz: CMatrix::zeros(r_zero, r_zero),
        }
    }

    /// Hermitian operator from its `++`, `+0` and `00` blocks.
    pub fn hermitian(opp: CMatrix, opz: CMatrix, ozz: CMatrix) -> Self {
        let ozp = opz.adjoint();
        Self { opp, opz, ozp, ozz }
    }
}

pub fn block_of(o: &CMatrix, dec: &BlockDecomposition) -> Result<BlockView> {
    let n = dec.dim();
    if o.shape() != (n, n) {
        return Err(BlocksError::DimensionMismatch(format!("operator {:?} vs decomposition of dimension {n}", o.shape())));
    }
    let vh = dec.v.adjoint();
    let yh = dec.y.adjoint();
    let ov = o * &dec.v;
    let oy = o * &dec.y;
    Ok(BlockView { opp: &vh * &ov, opz: &vh * &oy, ozp: &yh * &ov, ozz: &yh * &oy })
}

pub fn embed(bv: &BlockView, dec: &BlockDecomposition) -> Result<CMatrix> {
    let (rp, rz) = (dec.r_plus, dec.r_zero);
    let shapes = [bv.opp.shape(), bv.opz.shape(), bv.ozp.shape(), bv.ozz.shape()];
    if shapes != [(rp, rp), (rp, rz), (rz, rp), (rz, rz)] {
        return Err(BlocksError::DimensionMismatch(format!("block shapes {shapes:?} for r_+ = {rp}, r_0 = {rz}")));
    }
    let vh = dec.v.adjoint();
    let yh = dec.y.adjoint();
    let mut out = &(&dec.v * &bv.opp) * &vh;
    out += &(&(&dec.v * &bv.opz) * &yh);
    out += &(&(&dec.y * &bv.ozp) * &vh);
    out += &(&(&dec.y * &bv.ozz) * &yh);
    Ok(out)
}
