//! Symmetric logarithmic derivatives from the block equations and the
//! quantum Fisher information with its regular/null split.

use serde::Serialize;
use thiserror::Error;

use crate::blocks::{block_of, embed, BlockDecomposition, BlockView, BlocksError};
use crate::linalg::{herm_eigen, CMatrix, RMatrix};
use crate::model::{
    factor_frame_derivative, DerivativeSource, Factorization, ModelError, ParamPoint, StateBundle, StateModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SldError {
    #[error("null block of ∂_{param}ρ has norm {norm:.3e} > {tol:.1e}; the rank varies with θ")]
    RankDrift { param: usize, norm: f64, tol: f64 },
    #[error("SLD block equation residual {residual:.3e} for parameter {param}")]
    ResidualTooLarge { param: usize, residual: f64 },
    #[error("Lzz injection must hold {expected} Hermitian {r0}x{r0} matrices")]
    BadInjection { expected: usize, r0: usize },
    #[error("QFIM cross-check mismatch {residual:.3e}")]
    QfimInconsistent { residual: f64 },
    #[error(transparent)]
    Blocks(#[from] BlocksError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, SldError>;

#[derive(Debug, Clone)]
pub struct SldOptions {
    pub tau_sld: f64,
    pub tau_nullblock: f64,
    /// Replaces the default `L_00 = 0`.
    pub lzz: Option<Vec<CMatrix>>,
}

impl Default for SldOptions {
    fn default() -> Self {
        Self { tau_sld: 1e-9, tau_nullblock: 1e-6, lzz: None }
    }
}

#[derive(Debug, Clone)]
pub struct SldSet {
    pub lpp: Vec<CMatrix>,
    pub lpz: Vec<CMatrix>,
    pub lzz: Vec<CMatrix>,
    pub dec: BlockDecomposition,
    /// `‖(∂_lρ)_00‖_F`, recorded for rank-drift warnings.
    pub null_block_norms: Vec<f64>,
}

impl SldSet {
    pub fn n_params(&self) -> usize {
        self.lpp.len()
    }

    /// Full SLD `L_l` on the Hilbert space.
    pub fn full(&self, l: usize) -> CMatrix {
        let bv = BlockView::hermitian(self.lpp[l].clone(), self.lpz[l].clone(), self.lzz[l].clone());
        embed(&bv, &self.dec).expect("blocks match their decomposition")
    }

    /// Same SLDs with `L_00` replaced.
    pub fn with_lzz(&self, lzz: Vec<CMatrix>) -> Self {
        Self { lzz, ..self.clone() }
    }

    /// Same operators expressed in another gauge of the same subspaces.
    pub fn regauged(&self, dec: BlockDecomposition) -> Self {
        let up = &dec.v.adjoint() * &self.dec.v;
        let uz = &dec.y.adjoint() * &self.dec.y;
        let map = |m: &CMatrix, a: &CMatrix, b: &CMatrix| &(a * m) * &b.adjoint();
        Self {
            lpp: self.lpp.iter().map(|m| map(m, &up, &up)).collect(),
            lpz: self.lpz.iter().map(|m| map(m, &up, &uz)).collect(),
            lzz: self.lzz.iter().map(|m| map(m, &uz, &uz)).collect(),
            dec,
            null_block_norms: self.null_block_norms.clone(),
        }
    }
}

pub fn compute_slds(bundle: &StateBundle, dec: &BlockDecomposition, opts: &SldOptions) -> Result<SldSet> {
    let q = &dec.q;
    let (rp, rz) = (dec.r_plus, dec.r_zero);
    let p = bundle.drho.len();
    let lzz = match &opts.lzz {
        Some(v) => {
            if v.len() != p || v.iter().any(|m| m.shape() != (rz, rz) || m.hermitian_residual() > 1e-10 * (1.0 + m.fro_norm())) {
                return Err(SldError::BadInjection { expected: p, r0: rz });
            }
            v.clone()
        }
        None => vec![CMatrix::zeros(rz, rz); p],
    };
    let mut lpp = Vec::with_capacity(p);
    let mut lpz = Vec::with_capacity(p);
    let mut norms = Vec::with_capacity(p);
    for (l, d) in bundle.drho.iter().enumerate() {
        let b = block_of(d, dec)?;
        let nb = b.ozz.fro_norm();
        if nb > opts.tau_nullblock {
            return Err(SldError::RankDrift { param: l, norm: nb, tol: opts.tau_nullblock });
        }
        norms.push(nb);
        let a = CMatrix::from_fn(rp, rp, |j, k| b.opp[(j, k)] * (2.0 / (q[j] + q[k])));
        let z = CMatrix::from_fn(rp, rz, |j, k| b.opz[(j, k)] * (2.0 / q[j]));
        // Residuals of the defining equations.
        let qd = dec.rho_pp();
        let rpp = (&(&(&a * &qd) + &(&qd * &a)).scale(0.5) - &b.opp).fro_norm();
        let rpz = (&(&qd * &z).scale(0.5) - &b.opz).fro_norm();
        let residual = rpp.max(rpz);
        if residual > opts.tau_sld * (1.0 + d.fro_norm()) {
            return Err(SldError::ResidualTooLarge { param: l, residual });
        }
        lpp.push(a.hermitian_part());
        lpz.push(z);
    }
    Ok(SldSet { lpp, lpz, lzz, dec: dec.clone(), null_block_norms: norms })
}

/// `2 (∂_l V)† Y` in the factorization's own bases.
pub fn sld_offdiag_from_factorization(model: &dyn StateModel, theta: &ParamPoint, h: f64) -> Result<Vec<CMatrix>> {
    let f = model
        .factorization(theta)
        .ok_or_else(|| ModelError::NoFactorization(model.name().to_string()))?;
    (0..model.n_params())
        .map(|l| {
            let dv = factor_frame_derivative(model, theta, l, h)?;
            Ok((&dv.adjoint() * &f.y).scale(2.0))
        })
        .collect()
}

/// Re-expresses a factorization-basis `L_{+0}` in the bases of `dec`:
/// `V_dec† V_f L Y_f† Y_dec`.
pub fn align_offdiag(lpz: &CMatrix, f: &Factorization, dec: &BlockDecomposition) -> CMatrix {
    let a = &dec.v.adjoint() * &f.v;
    let b = &f.y.adjoint() * &dec.y;
    &(&a * lpz) * &b
}

/// Expresses a decomposition-basis `L_{++}` in factorization order.
pub fn to_factor_basis(lpp: &CMatrix, f: &Factorization, dec: &BlockDecomposition) -> CMatrix {
    lpp.congruence(&(&dec.v.adjoint() * &f.v))
}

#[derive(Debug, Clone, Serialize)]
pub struct Qfim {
    pub f: RMatrix,
    pub f_reg: RMatrix,
    pub f_null: RMatrix,
    /// `max |F − Re tr(ρ L_l L_m)|` with embedded SLDs.
    pub cross_check: f64,
    pub min_eigenvalues: [f64; 3],
}

pub fn qfim(slds: &SldSet) -> Result<Qfim> {
    let p = slds.n_params();
    let qd = slds.dec.rho_pp();
    let mut f_reg = RMatrix::zeros(p, p);
    let mut f_null = RMatrix::zeros(p, p);
    for l in 0..p {
        for m in 0..p {
            let anti = &(&slds.lpp[l] * &slds.lpp[m]) + &(&slds.lpp[m] * &slds.lpp[l]);
            f_reg[(l, m)] = 0.5 * (&qd * &anti).trace().re;
            let nn = &(&slds.lpz[l] * &slds.lpz[m].adjoint()) + &(&slds.lpz[m] * &slds.lpz[l].adjoint());
            f_null[(l, m)] = 0.5 * (&qd * &nn).trace().re;
        }
    }
    let f = &f_reg + &f_null;

    let rho = (&(&slds.dec.v * &qd)) * &slds.dec.v.adjoint();
    let full: Vec<CMatrix> = (0..p).map(|l| slds.full(l)).collect();
    let mut cross = 0.0f64;
    for l in 0..p {
        for m in 0..p {
            let direct = (&(&rho * &full[l]) * &full[m]).trace().re;
            cross = cross.max((direct - f[(l, m)]).abs());
        }
    }
    if cross > 1e-9 * (1.0 + f.max_abs()) {
        return Err(SldError::QfimInconsistent { residual: cross });
    }
    let min_eig = |m: &RMatrix| herm_eigen(&m.to_complex()).map(|e| e.values[0]).unwrap_or(f64::NAN);
    let min_eigenvalues = [min_eig(&f), min_eig(&f_reg), min_eig(&f_null)];
    Ok(Qfim { f, f_reg, f_null, cross_check: cross, min_eigenvalues })
}

/// Runs the block equations backwards: the derivative bundle whose SLD
/// blocks are the given `L_{++}`, `L_{+0}` at the state `V diag(q) V†`.
/// Trace preservation requires `tr(diag(q) L_{++}) = 0`; it is not enforced.
pub fn bundle_from_blocks(dec: &BlockDecomposition, lpp: &[CMatrix], lpz: &[CMatrix]) -> StateBundle {
    let qd = dec.rho_pp();
    let rho = &(&dec.v * &qd) * &dec.v.adjoint();
    let drho = lpp
        .iter()
        .zip(lpz)
        .map(|(a, z)| {
            let dpp = (&(a * &qd) + &(&qd * a)).scale(0.5);
            let dpz = (&qd * z).scale(0.5);
            let bv = BlockView::hermitian(dpp, dpz, CMatrix::zeros(dec.r_zero, dec.r_zero));
            embed(&bv, dec).expect("blocks match their decomposition")
        })
        .collect();
    StateBundle { theta: ParamPoint::new(vec![0.0; lpp.len()]), rho, drho, source: DerivativeSource::Analytic }
}
