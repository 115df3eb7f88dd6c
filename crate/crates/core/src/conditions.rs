//! Saturability conditions on the SLD blocks.
//!
//! Condition 1: the `L_{++}` commute. Condition 3: `L_{l,+0} L_{m,+0}†` is
//! symmetric in `(l, m)`. Condition 4: a unitary `W` on the null space makes
//! corresponding columns of `L_{l,+0} W` real multiples of one another.
//! Condition 2 (the range-frame PDE) is only verified for a supplied `U_θ`.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{comm_norm, pinv, simultaneous_diagonalize, svd, CMatrix, LinalgError, SimDiagOptions, C64};
use crate::model::{factor_frame_derivative, ModelError, ParamPoint, StateModel};
use crate::sld::SldSet;
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("matrix is not unitary (residual {residual:.3e})")]
    NotUnitary { residual: f64 },
    #[error("`W` has shape {got:?}, expected {expected}x{expected}")]
    WrongShape { expected: usize, got: (usize, usize) },
    #[error("U_θ is undefined at {theta:?}")]
    UndefinedU { theta: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ConditionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub residual: f64,
    pub tol: f64,
}

impl Verdict {
    fn new(residual: f64, tol: f64) -> Self {
        Self { pass: residual <= tol, residual, tol }
    }
}

fn pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |l| (l + 1..p).map(move |m| (l, m)))
}

pub fn check_condition1(slds: &SldSet, tol: f64) -> Verdict {
    let r = pairs(slds.n_params())
        .map(|(l, m)| {
            let (a, b) = (&slds.lpp[l], &slds.lpp[m]);
            comm_norm(a, b).expect("square blocks") / (1.0 + a.fro_norm() * b.fro_norm())
        })
        .fold(0.0, f64::max);
    Verdict::new(r, tol)
}

/// `A_l A_m† − A_m A_l†` for the `L_{+0}` blocks.
fn null_commutator(slds: &SldSet, l: usize, m: usize) -> CMatrix {
    let (a, b) = (&slds.lpz[l], &slds.lpz[m]);
    &(a * &b.adjoint()) - &(b * &a.adjoint())
}

pub fn check_condition3(slds: &SldSet, tol: f64) -> Verdict {
    if slds.dec.r_zero == 0 {
        return Verdict::new(0.0, tol);
    }
    let r = pairs(slds.n_params())
        .map(|(l, m)| {
            let scale = 1.0 + slds.lpz[l].fro_norm() * slds.lpz[m].fro_norm();
            null_commutator(slds, l, m).fro_norm() / scale
        })
        .fold(0.0, f64::max);
    Verdict::new(r, tol)
}

/// `P_+ [L_l, L_m] P_+ = [L_{l,++}, L_{m,++}] + A_l A_m† − A_m A_l†`.
pub fn check_partial_commutativity(slds: &SldSet, tol: f64) -> Verdict {
    let r = pairs(slds.n_params())
        .map(|(l, m)| {
            let (a, b) = (&slds.lpp[l], &slds.lpp[m]);
            let c = &(&(a * b) - &(b * a)) + &null_commutator(slds, l, m);
            let scale = 1.0 + a.fro_norm() * b.fro_norm() + slds.lpz[l].fro_norm() * slds.lpz[m].fro_norm();
            c.fro_norm() / scale
        })
        .fold(0.0, f64::max);
    Verdict::new(r, tol)
}

/// One proportionality constant: column `s` of `L_{l,+0} W` equals
/// `lambda` times column `s` of `L_{m,+0} W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaEntry {
    pub l: usize,
    pub m: usize,
    pub s: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WVerification {
    pub pass: bool,
    pub lambda: Vec<LambdaEntry>,
    /// Columns where every `L_{l,+0} W e_s` vanishes.
    pub zero_columns: Vec<usize>,
    /// Largest proportionality residual, relative to `1 + max ‖L_{l,+0}‖_F`.
    pub residual: f64,
    /// Largest `|Im|` of a raw column ratio.
    pub imag: f64,
    pub failures: Vec<String>,
}

fn vnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn verify_w(slds: &SldSet, w: &CMatrix, tols: &Tolerances) -> Result<WVerification> {
    let r0 = slds.dec.r_zero;
    if w.shape() != (r0, r0) {
        return Err(ConditionError::WrongShape { expected: r0, got: w.shape() });
    }
    let unit = (&(&w.adjoint() * w) - &CMatrix::identity(r0)).fro_norm();
    if unit > tols.unitary {
        return Err(ConditionError::NotUnitary { residual: unit });
    }
    let p = slds.n_params();
    let scale = 1.0 + slds.lpz.iter().map(CMatrix::fro_norm).fold(0.0, f64::max);
    let cols: Vec<CMatrix> = slds.lpz.iter().map(|z| z * w).collect();
    let mut out = WVerification { pass: true, lambda: Vec::new(), zero_columns: Vec::new(), residual: 0.0, imag: 0.0, failures: Vec::new() };
    for s in 0..r0 {
        let x: Vec<Vec<C64>> = cols.iter().map(|c| c.col(s)).collect();
        let zero: Vec<bool> = x.iter().map(|v| vnorm(v) <= tols.zero * scale).collect();
        if zero.iter().all(|&z| z) {
            out.zero_columns.push(s);
            continue;
        }
        for l in 0..p {
            for m in 0..p {
                if l == m || (zero[l] && zero[m]) {
                    continue;
                }
                if zero[l] != zero[m] {
                    out.pass = false;
                    out.failures.push(format!("column {s}: parameter {} vanishes but {} does not", if zero[l] { l } else { m }, if zero[l] { m } else { l }));
                    continue;
                }
                let (xl, xm) = (&x[l], &x[m]);
                let inner: C64 = xm.iter().zip(xl).map(|(a, b)| a.conj() * b).sum();
                let raw = inner / vnorm(xm).powi(2);
                let lambda = raw.re;
                let res: Vec<C64> = xl.iter().zip(xm).map(|(a, b)| a - b * lambda).collect();
                let residual = vnorm(&res) / scale;
                out.residual = out.residual.max(residual);
                out.imag = out.imag.max(raw.im.abs());
                if residual > tols.c4 || raw.im.abs() > tols.c4 {
                    out.pass = false;
                    out.failures.push(format!(
                        "column {s}, pair ({l}, {m}): ratio {:.6e}{:+.6e}i, residual {residual:.3e}",
                        raw.re, raw.im
                    ));
                }
                out.lambda.push(LambdaEntry { l, m, s, lambda });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct WCandidate {
    pub w: CMatrix,
    pub verification: WVerification,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WSearch {
    Certified(WCandidate),
    /// The search is incomplete: this does not show that no `W` exists.
    NotCertified { reason: String },
}

impl WSearch {
    pub fn certified(&self) -> Option<&WCandidate> {
        match self {
            WSearch::Certified(c) => Some(c),
            WSearch::NotCertified { .. } => None,
        }
    }
}

/// Heuristic search for a Condition-4 unitary.
///
/// The common kernel of all `L_{l,+0}` supplies zero columns. On its
/// complement, `G_l = pinv(B_r) B_l` with `B_r` the largest block; if the
/// `G_l` are Hermitian and commute, their joint eigenvectors complete `W`.
/// Only candidates that pass [`verify_w`] are returned as certified.
pub fn find_w(slds: &SldSet, tols: &Tolerances, simdiag: SimDiagOptions) -> WSearch {
    match search_w(slds, tols, simdiag) {
        Ok(w) => match verify_w(slds, &w, tols) {
            Ok(v) if v.pass => WSearch::Certified(WCandidate { w, verification: v }),
            Ok(v) => WSearch::NotCertified { reason: format!("candidate failed verification: {}", v.failures.join("; ")) },
            Err(e) => WSearch::NotCertified { reason: e.to_string() },
        },
        Err(reason) => WSearch::NotCertified { reason },
    }
}

fn search_w(slds: &SldSet, tols: &Tolerances, simdiag: SimDiagOptions) -> std::result::Result<CMatrix, String> {
    let r0 = slds.dec.r_zero;
    if r0 == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let scale = 1.0 + slds.lpz.iter().map(CMatrix::fro_norm).fold(0.0, f64::max);
    if slds.lpz.iter().all(|z| z.fro_norm() <= tols.zero * scale) {
        return Ok(CMatrix::identity(r0));
    }
    let stacked = slds.lpz.iter().skip(1).fold(slds.lpz[0].clone(), |acc, z| acc.vstack(z));
    let dec = svd(&stacked).map_err(|e| e.to_string())?;
    let kernel: Vec<usize> = (0..r0).filter(|&j| dec.sigma[j] <= tols.zero * scale).collect();
    let complement: Vec<usize> = (0..r0).filter(|&j| dec.sigma[j] > tols.zero * scale).collect();
    let k = dec.v.select_cols(&kernel);
    let kp = dec.v.select_cols(&complement);

    let blocks: Vec<CMatrix> = slds.lpz.iter().map(|z| z * &kp).collect();
    let r = (0..blocks.len())
        .max_by(|&a, &b| blocks[a].fro_norm().total_cmp(&blocks[b].fro_norm()))
        .expect("at least one parameter");
    let inv = pinv(&blocks[r], tols.sv).map_err(|e| e.to_string())?;
    let g: Vec<CMatrix> = blocks.iter().map(|b| &inv * b).collect();
    for (l, gl) in g.iter().enumerate() {
        let h = gl.hermitian_residual();
        if h > tols.c4 * (1.0 + gl.fro_norm()) {
            return Err(format!("G_{} is not Hermitian (residual {h:.3e})", l + 1));
        }
    }
    let family: Vec<CMatrix> = g.iter().map(CMatrix::hermitian_part).collect();
    let opts = SimDiagOptions { comm_tol: tols.c4, ..simdiag };
    let sd = simultaneous_diagonalize(&family, opts).map_err(|e| format!("G family: {e}"))?;
    Ok(k.hstack(&(&kp * &sd.unitary)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    SaturableProjective,
    NecessaryFailed,
    Undetermined,
}

impl Classification {
    pub fn from_verdicts(c1: bool, c3: bool, c4_certified: bool) -> Self {
        if !c1 || !c3 {
            Classification::NecessaryFailed
        } else if c4_certified {
            Classification::SaturableProjective
        } else {
            Classification::Undetermined
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialCommutativity {
    #[serde(flatten)]
    pub verdict: Verdict,
    /// False if Conditions 1 and 3 pass while this check fails.
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub c1: Verdict,
    pub c3: Verdict,
    pub partial_comm: PartialCommutativity,
    pub c4: WSearch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<Condition2Report>,
    pub classification: Classification,
}

pub fn check_conditions(slds: &SldSet, tols: &Tolerances, simdiag: SimDiagOptions) -> ConditionReport {
    let c1 = check_condition1(slds, tols.cond);
    let c3 = check_condition3(slds, tols.cond);
    let pc = check_partial_commutativity(slds, tols.cond);
    let consistent = !(c1.pass && c3.pass) || pc.pass;
    let c4 = find_w(slds, tols, simdiag);
    let classification = Classification::from_verdicts(c1.pass, c3.pass, c4.certified().is_some());
    ConditionReport { c1, c3, partial_comm: PartialCommutativity { verdict: pc, consistent }, c4, c2: None, classification }
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition2Report {
    #[serde(flatten)]
    pub verdict: Verdict,
    /// `‖R_l‖_F` per parameter.
    pub per_param: Vec<f64>,
    pub source: String,
}

/// Checks a candidate `U_θ` against the range-frame PDE
/// `U†(∂U − U V†∂V) ρ_{++} + ρ_{++} (∂U − U V†∂V)† U = 0`
/// with `∂U` from central differences and `V`, `ρ_{++}` from the model
/// factorization.
pub fn verify_condition2_u(
    model: &dyn StateModel,
    theta: &ParamPoint,
    u_eval: &dyn Fn(&[f64]) -> Option<CMatrix>,
    h: f64,
    tols: &Tolerances,
) -> Result<Condition2Report> {
    let f = model
        .factorization(theta)
        .ok_or_else(|| ModelError::NoFactorization(model.name().to_string()))?;
    let rp = f.v.cols();
    let get = |t: &[f64]| -> Result<CMatrix> {
        let u = u_eval(t).ok_or_else(|| ConditionError::UndefinedU { theta: t.to_vec() })?;
        if u.shape() != (rp, rp) {
            return Err(ConditionError::WrongShape { expected: rp, got: u.shape() });
        }
        let res = (&(&u.adjoint() * &u) - &CMatrix::identity(rp)).fro_norm();
        if res > tols.unitary {
            return Err(ConditionError::NotUnitary { residual: res });
        }
        Ok(u)
    };
    let u = get(theta)?;
    let rho = CMatrix::from_real_diag(&f.q);
    let mut per_param = Vec::with_capacity(model.n_params());
    for l in 0..model.n_params() {
        let du = (&get(&theta.shifted(l, h))? - &get(&theta.shifted(l, -h))?).scale(0.5 / h);
        let dv = factor_frame_derivative(model, theta, l, h)?;
        let a = &f.v.adjoint() * &dv;
        let m = &du - &(&u * &a);
        let r = &(&(&u.adjoint() * &m) * &rho) + &(&(&rho * &m.adjoint()) * &u);
        per_param.push(r.fro_norm());
    }
    let residual = per_param.iter().copied().fold(0.0, f64::max);
    Ok(Condition2Report { verdict: Verdict::new(residual, tols.pde), per_param, source: "model factorization".into() })
}

/// Range frame of a model whose range does not move: `S_θ = B_+† V_θ`
/// with `B_+ = V_{θ_ref}`.
#[derive(Debug, Clone)]
pub struct FixedRangeFrame {
    pub b_plus: CMatrix,
}

impl FixedRangeFrame {
    pub fn u(&self, model: &dyn StateModel, theta: &[f64]) -> Option<CMatrix> {
        Some(&self.b_plus.adjoint() * &model.factorization(theta)?.v)
    }
}

/// `Some` when `(∂_l V)† Y` vanishes for every `l` at `theta`.
pub fn solve_u_fixed_range(
    model: &dyn StateModel,
    theta: &ParamPoint,
    theta_ref: Option<&ParamPoint>,
    h: f64,
    tols: &Tolerances,
) -> Result<Option<FixedRangeFrame>> {
    let f = model
        .factorization(theta)
        .ok_or_else(|| ModelError::NoFactorization(model.name().to_string()))?;
    for l in 0..model.n_params() {
        let dv = factor_frame_derivative(model, theta, l, h)?;
        if (&dv.adjoint() * &f.y).fro_norm() > tols.zero * (1.0 + dv.fro_norm()) {
            return Ok(None);
        }
    }
    let anchor = match theta_ref {
        Some(t) => model.factorization(t).ok_or_else(|| ModelError::NoFactorization(model.name().to_string()))?,
        None => f.clone(),
    };
    let frame = FixedRangeFrame { b_plus: anchor.v };
    let s = frame.u(model, theta).expect("factorization exists at theta");
    let res = (&(&s.adjoint() * &s) - &CMatrix::identity(s.cols())).fro_norm();
    if res > tols.unitary {
        return Err(ConditionError::NotUnitary { residual: res });
    }
    Ok(Some(frame))
}
