//! Measurements: validation, the optimal projective construction, the
//! per-effect optimality conditions and the saturation identities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{block_of, embed, BlockDecomposition, BlockView};
use crate::conditions::{check_condition1, WCandidate};
use crate::linalg::{herm_eigen, simultaneous_diagonalize, CMatrix, LinalgError, RMatrix, SimDiagOptions, C64};
use crate::model::StateBundle;
use crate::sld::{Qfim, SldSet};
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PovmError {
    #[error("POVM has no effects")]
    Empty,
    #[error("effect {index} has shape {got:?}, expected {expected}x{expected}")]
    DimensionMismatch { index: usize, expected: usize, got: (usize, usize) },
    #[error("effect {index} is not Hermitian (residual {residual:.3e})")]
    NotHermitian { index: usize, residual: f64 },
    #[error("effect {index} has eigenvalue {min_eig:.3e} < 0")]
    NotPsd { index: usize, min_eig: f64 },
    #[error("effects do not sum to the identity (residual {residual:.3e})")]
    Incomplete { residual: f64 },
    #[error("preconditions for the optimal construction fail: {0}")]
    ConditionFailed(String),
    #[error("regular effect {index} has a +0 block of norm {norm:.3e}; the POVM is not optimal")]
    NotBlockDiagonal { index: usize, norm: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, PovmError>;

/// On-disk POVM.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmFile {
    pub effects: Vec<CMatrix>,
}

#[derive(Debug, Clone)]
pub struct Povm {
    pub effects: Vec<CMatrix>,
    pub projective: bool,
}

impl Povm {
    /// Validates positivity and completeness. Eigenvalues in `[−tol, 0)`
    /// are clipped to zero and reported in the returned warnings.
    pub fn new(effects: Vec<CMatrix>, tols: &Tolerances) -> Result<(Self, Vec<String>)> {
        let n = effects.first().ok_or(PovmError::Empty)?.rows();
        let tol = tols.povm;
        let mut warnings = Vec::new();
        let mut clean = Vec::with_capacity(effects.len());
        for (index, e) in effects.into_iter().enumerate() {
            if e.shape() != (n, n) {
                return Err(PovmError::DimensionMismatch { index, expected: n, got: e.shape() });
            }
            let residual = e.hermitian_residual();
            if residual > tol * (1.0 + e.fro_norm()) {
                return Err(PovmError::NotHermitian { index, residual });
            }
            let e = e.hermitian_part();
            let eig = herm_eigen(&e)?;
            let min_eig = eig.values[0];
            if min_eig < -tol {
                return Err(PovmError::NotPsd { index, min_eig });
            }
            if min_eig < 0.0 {
                warnings.push(format!("effect {index}: clipped eigenvalue {min_eig:.3e} to zero"));
                let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
                clean.push(CMatrix::from_real_diag(&clipped).congruence(&eig.vectors.adjoint()));
            } else {
                clean.push(e);
            }
        }
        let mut total = CMatrix::zeros(n, n);
        for e in &clean {
            total += e;
        }
        let residual = (&total - &CMatrix::identity(n)).fro_norm();
        if residual > tol {
            return Err(PovmError::Incomplete { residual });
        }
        let projective = is_projective(&clean, tols.proj);
        Ok((Self { effects: clean, projective }, warnings))
    }

    pub fn from_file(file: PovmFile, tols: &Tolerances) -> Result<(Self, Vec<String>)> {
        Self::new(file.effects, tols)
    }

    pub fn to_file(&self) -> PovmFile {
        PovmFile { effects: self.effects.clone() }
    }

    pub fn dim(&self) -> usize {
        self.effects[0].rows()
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        self.effects.iter().map(|e| (rho * e).trace().re).collect()
    }

    /// Effects reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { effects: perm.iter().map(|&k| self.effects[k].clone()).collect(), projective: self.projective }
    }
}

fn is_projective(effects: &[CMatrix], tol: f64) -> bool {
    effects.iter().enumerate().all(|(j, a)| {
        (&(a * a) - a).fro_norm() <= tol && effects[j + 1..].iter().all(|b| (a * b).fro_norm() <= tol)
    })
}

/// Joint spectral projectors of the `L_{++}` embedded in the range, plus
/// `W e_j e_j† W†` embedded in the null block.
pub fn construct_optimal(slds: &SldSet, w: &WCandidate, tols: &Tolerances, simdiag: SimDiagOptions) -> Result<Povm> {
    let c1 = check_condition1(slds, tols.cond);
    if !c1.pass {
        return Err(PovmError::ConditionFailed(format!("L_++ do not commute (residual {:.3e})", c1.residual)));
    }
    if !w.verification.pass {
        return Err(PovmError::ConditionFailed("W is not certified".into()));
    }
    let dec = &slds.dec;
    let (rp, rz) = (dec.r_plus, dec.r_zero);
    if w.w.shape() != (rz, rz) {
        return Err(PovmError::ConditionFailed(format!("W has shape {:?}, expected {rz}x{rz}", w.w.shape())));
    }
    let sd = simultaneous_diagonalize(&slds.lpp, SimDiagOptions { comm_tol: tols.cond, ..simdiag })?;
    let scale = 1.0 + sd.joint_values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let clusters = cluster_tuples(&sd.joint_values, tols.cluster * scale);

    let mut effects = Vec::with_capacity(clusters.len() + rz);
    for members in &clusters {
        let mut pi = CMatrix::zeros(rp, rp);
        for &s in members {
            let u = sd.unitary.col(s);
            pi += &CMatrix::outer(&u, &u);
        }
        let mut bv = BlockView::zeros(rp, rz);
        bv.opp = pi;
        effects.push(embed(&bv, dec).expect("block shapes"));
    }
    for j in 0..rz {
        let wj = w.w.col(j);
        let mut bv = BlockView::zeros(rp, rz);
        bv.ozz = CMatrix::outer(&wj, &wj);
        effects.push(embed(&bv, dec).expect("block shapes"));
    }
    let (povm, _) = Povm::new(effects, tols)?;
    Ok(povm)
}

/// Groups tuples whose ℓ∞ distance is within `tol` (transitively), in
/// lexicographic order of their smallest member.
fn cluster_tuples(values: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a].iter().zip(&values[b]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let close = |a: usize, b: usize| values[a].iter().zip(&values[b]).all(|(x, y)| (x - y).abs() <= tol);
    let mut label = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &s in &order {
        if label[s] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut stack = vec![s];
        let mut members = Vec::new();
        label[s] = id;
        while let Some(a) = stack.pop() {
            members.push(a);
            for &b in &order {
                if label[b] == usize::MAX && close(a, b) {
                    label[b] = id;
                    stack.push(b);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Regular,
    Null,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectLabel {
    pub kind: EffectKind,
    pub probability: f64,
    /// Null effects only: largest of `‖E_{++}‖_F`, `‖E_{+0}‖_F`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_block_residual: Option<f64>,
    /// Null effect whose `++` or `+0` block does not vanish.
    pub inconsistent_null: bool,
}

pub fn classify(povm: &Povm, dec: &BlockDecomposition, tols: &Tolerances) -> Vec<EffectLabel> {
    let rho = &(&dec.v * &dec.rho_pp()) * &dec.v.adjoint();
    povm.effects
        .iter()
        .map(|e| {
            let probability = (&rho * e).trace().re;
            if probability > tols.p {
                EffectLabel { kind: EffectKind::Regular, probability, null_block_residual: None, inconsistent_null: false }
            } else {
                let b = block_of(e, dec).expect("matching dimensions");
                let r = b.opp.fro_norm().max(b.opz.fro_norm());
                EffectLabel {
                    kind: EffectKind::Null,
                    probability,
                    null_block_residual: Some(r),
                    inconsistent_null: r > tols.proj,
                }
            }
        })
        .collect()
}

/// Moves the `00` block of every regular effect into a separate null
/// effect, so that the null effects alone resolve the identity on the
/// null space.
pub fn canonicalize(povm: &Povm, slds: &SldSet, tols: &Tolerances) -> Result<Povm> {
    let dec = &slds.dec;
    let labels = classify(povm, dec, tols);
    let mut out = Vec::with_capacity(povm.len());
    let mut split = Vec::new();
    for (index, (e, lab)) in povm.effects.iter().zip(&labels).enumerate() {
        if lab.kind == EffectKind::Null {
            out.push(e.clone());
            continue;
        }
        let b = block_of(e, dec).expect("matching dimensions");
        let scale = 1.0 + e.fro_norm();
        let norm = b.opz.fro_norm();
        if norm > tols.zero * scale {
            return Err(PovmError::NotBlockDiagonal { index, norm });
        }
        if b.ozz.fro_norm() > tols.zero * scale {
            let mut reg = BlockView::zeros(dec.r_plus, dec.r_zero);
            reg.opp = b.opp;
            let mut null = BlockView::zeros(dec.r_plus, dec.r_zero);
            null.ozz = b.ozz;
            out.push(embed(&reg, dec).expect("block shapes"));
            split.push(embed(&null, dec).expect("block shapes"));
        } else {
            out.push(e.clone());
        }
    }
    out.extend(split);
    let (p, _) = Povm::new(out, tols)?;
    Ok(p)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularCheck {
    pub effect: usize,
    pub probability: f64,
    /// `c_l^k` per parameter (real part).
    pub c: Vec<f64>,
    pub c_imag: Vec<f64>,
    /// `‖E L_l P_+ − c E P_+‖_F / (1 + ‖E‖_F ‖L_l‖_F)` per parameter.
    pub residual: Vec<f64>,
    /// `‖E_{+0}‖_F`; optimal regular effects are block diagonal.
    pub offdiag_block: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullPair {
    pub l: usize,
    pub m: usize,
    /// Absent when both sides vanish (any real constant works).
    pub c: Option<f64>,
    pub imag: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullCheck {
    pub effect: usize,
    pub pairs: Vec<NullPair>,
    /// Largest `|c_lm c_ml − 1|` over pairs with both constants defined.
    pub reciprocity: f64,
    pub inconsistent_blocks: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationReport {
    pub f: RMatrix,
    pub f_reg: RMatrix,
    pub f_null: RMatrix,
    pub f_c: RMatrix,
    pub null_sum: RMatrix,
    /// `‖F_c − F_reg‖_max`.
    pub regular_deviation: f64,
    /// `‖N − F_null‖_max`.
    pub null_deviation: f64,
    /// `τ_sat (1 + ‖F‖_max)`.
    pub tol: f64,
    pub excluded_outcomes: Vec<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub labels: Vec<EffectLabel>,
    pub regular: Vec<RegularCheck>,
    pub null: Vec<NullCheck>,
    /// Largest `‖E_{+0}‖_F` over regular effects.
    pub block_diagonal_residual: f64,
    pub canonical_form_ok: bool,
    /// `‖Σ_null E_00 − I‖_F`. Informational: holds after canonicalization.
    pub null_sum_residual: f64,
    pub null_sum_ok: bool,
    pub saturation: SaturationReport,
    pub pass: bool,
}

fn frob_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.inner(b)
}

pub fn verify_optimality(povm: &Povm, slds: &SldSet, bundle: &StateBundle, qfim: &Qfim, tols: &Tolerances) -> OptimalityReport {
    let dec = &slds.dec;
    let p = slds.n_params();
    let labels = classify(povm, dec, tols);
    let full: Vec<CMatrix> = (0..p).map(|l| slds.full(l)).collect();
    let mut regular = Vec::new();
    let mut null = Vec::new();
    let mut block_res = 0.0f64;
    let mut null_sum = CMatrix::zeros(dec.r_zero, dec.r_zero);

    for (k, (e, lab)) in povm.effects.iter().zip(&labels).enumerate() {
        let b = block_of(e, dec).expect("matching dimensions");
        match lab.kind {
            EffectKind::Regular => {
                let ep = e * &dec.p_plus;
                let denom = frob_inner(&ep, &ep).re;
                let mut c = Vec::with_capacity(p);
                let mut c_imag = Vec::with_capacity(p);
                let mut residual = Vec::with_capacity(p);
                for l in &full {
                    let x = &(e * l) * &dec.p_plus;
                    let raw = frob_inner(&ep, &x) / denom;
                    let r = (&x - &ep.scale(raw.re)).fro_norm() / (1.0 + e.fro_norm() * l.fro_norm());
                    c.push(raw.re);
                    c_imag.push(raw.im);
                    residual.push(r);
                }
                let offdiag_block = b.opz.fro_norm();
                block_res = block_res.max(offdiag_block);
                let pass = residual.iter().all(|&r| r <= tols.cond) && c_imag.iter().all(|x| x.abs() <= tols.cond);
                regular.push(RegularCheck { effect: k, probability: lab.probability, c, c_imag, residual, offdiag_block, pass });
            }
            EffectKind::Null => {
                null_sum += &b.ozz;
                let xs: Vec<CMatrix> = slds.lpz.iter().map(|z| &b.ozz * &z.adjoint()).collect();
                let scale = 1.0 + b.ozz.fro_norm() * slds.lpz.iter().map(CMatrix::fro_norm).fold(0.0, f64::max);
                let mut pairs = Vec::new();
                let mut table = vec![vec![None; p]; p];
                for l in 0..p {
                    for m in 0..p {
                        if l == m {
                            continue;
                        }
                        let (nl, nm) = (xs[l].fro_norm(), xs[m].fro_norm());
                        let (zl, zm) = (nl <= tols.zero * scale, nm <= tols.zero * scale);
                        let pair = if zl && zm {
                            NullPair { l, m, c: None, imag: 0.0, residual: 0.0, pass: true }
                        } else if zl != zm {
                            NullPair { l, m, c: None, imag: 0.0, residual: nl.max(nm) / scale, pass: false }
                        } else {
                            let raw = frob_inner(&xs[m], &xs[l]) / (nm * nm);
                            let residual = (&xs[l] - &xs[m].scale(raw.re)).fro_norm() / scale;
                            table[l][m] = Some(raw.re);
                            let pass = residual <= tols.cond && raw.im.abs() <= tols.cond;
                            NullPair { l, m, c: Some(raw.re), imag: raw.im, residual, pass }
                        };
                        pairs.push(pair);
                    }
                }
                let mut reciprocity = 0.0f64;
                for l in 0..p {
                    for m in l + 1..p {
                        if let (Some(a), Some(b)) = (table[l][m], table[m][l]) {
                            reciprocity = reciprocity.max((a * b - 1.0).abs());
                        }
                    }
                }
                let pass = pairs.iter().all(|x| x.pass) && !lab.inconsistent_null && reciprocity <= 1e-6;
                null.push(NullCheck { effect: k, pairs, reciprocity, inconsistent_blocks: lab.inconsistent_null, pass });
            }
        }
    }
    let null_sum_residual = (&null_sum - &CMatrix::identity(dec.r_zero)).fro_norm();
    let canonical_form_ok = block_res <= tols.proj;
    let saturation = saturation_check(povm, slds, bundle, qfim, tols);
    let pass = canonical_form_ok
        && regular.iter().all(|r| r.pass)
        && null.iter().all(|n| n.pass)
        && saturation.pass;
    OptimalityReport {
        labels,
        regular,
        null,
        block_diagonal_residual: block_res,
        canonical_form_ok,
        null_sum_residual,
        null_sum_ok: null_sum_residual <= tols.proj,
        saturation,
        pass,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassicalFisher {
    pub f_c: RMatrix,
    pub probabilities: Vec<f64>,
    /// Outcomes with `p ≤ τ_p`, left out of the sum.
    pub excluded: Vec<usize>,
    pub excluded_mass: f64,
}

pub fn classical_fi(povm: &Povm, bundle: &StateBundle, tau_p: f64) -> ClassicalFisher {
    let p = bundle.drho.len();
    let probabilities = povm.probabilities(&bundle.rho);
    let mut f_c = RMatrix::zeros(p, p);
    let mut excluded = Vec::new();
    let mut excluded_mass = 0.0;
    for (k, e) in povm.effects.iter().enumerate() {
        let pk = probabilities[k];
        if pk <= tau_p {
            excluded.push(k);
            excluded_mass += pk.max(0.0);
            continue;
        }
        let dp: Vec<f64> = bundle.drho.iter().map(|d| (d * e).trace().re).collect();
        for l in 0..p {
            for m in 0..p {
                f_c[(l, m)] += dp[l] * dp[m] / pk;
            }
        }
    }
    ClassicalFisher { f_c, probabilities, excluded, excluded_mass }
}

/// `N_lm = Σ_{null k} Re tr(diag(q) L_{l,+0} E_{k,00} L_{m,+0}†)`.
pub fn null_component_sum(povm: &Povm, slds: &SldSet, tols: &Tolerances) -> RMatrix {
    let dec = &slds.dec;
    let p = slds.n_params();
    let q = dec.rho_pp();
    let labels = classify(povm, dec, tols);
    let mut n = RMatrix::zeros(p, p);
    for (e, lab) in povm.effects.iter().zip(&labels) {
        if lab.kind != EffectKind::Null {
            continue;
        }
        let e00 = e.congruence(&dec.y);
        for l in 0..p {
            for m in 0..p {
                n[(l, m)] += (&(&(&q * &slds.lpz[l]) * &e00) * &slds.lpz[m].adjoint()).trace().re;
            }
        }
    }
    n
}

pub fn saturation_check(povm: &Povm, slds: &SldSet, bundle: &StateBundle, qfim: &Qfim, tols: &Tolerances) -> SaturationReport {
    let fc = classical_fi(povm, bundle, tols.p);
    let n = null_component_sum(povm, slds, tols);
    let regular_deviation = (&fc.f_c - &qfim.f_reg).max_abs();
    let null_deviation = (&n - &qfim.f_null).max_abs();
    let tol = tols.sat * (1.0 + qfim.f.max_abs());
    SaturationReport {
        f: qfim.f.clone(),
        f_reg: qfim.f_reg.clone(),
        f_null: qfim.f_null.clone(),
        f_c: fc.f_c,
        null_sum: n,
        regular_deviation,
        null_deviation,
        tol,
        excluded_outcomes: fc.excluded,
        pass: regular_deviation <= tol && null_deviation <= tol,
    }
}

#[cfg(test)]
mod tests;
