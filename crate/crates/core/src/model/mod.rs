//! Parameterized families of density matrices `θ ↦ ρ_θ`.
//!
//! A model supplies `ρ_θ`, optionally analytic derivatives `∂_l ρ_θ`, and
//! optionally a spectral factorization `ρ_θ = V diag(q) V†` together with
//! an orthonormal null basis `Y`. Factorizations are gauge-continuous in θ,
//! which makes them usable for derivatives of the frame itself.

mod builtin;
mod config;
mod stencil;
mod wrappers;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{herm_eigen, CMatrix, C64};

pub use builtin::{builtin_registry, ClassicalDiag, Example2, FixedRange, ModelDescriptor, PureState, QubitXY};
pub use config::{load_model, load_model_str, LoadedModel};
pub use stencil::{stencil_config, StencilConfig, StencilModel};
pub use wrappers::{Rescaled, Restricted, UnitaryOrbit};

/// Invariant tolerance on states supplied by models.
pub const STATE_TOL: f64 = 1e-10;
/// `|tr ∂_l ρ|` allowed on derivative bundles.
pub const TRACE_TOL: f64 = 1e-7;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter point {theta:?} is outside the model domain")]
    OutOfDomain { theta: Vec<f64> },
    #[error("expected {expected} parameters, got {got}")]
    WrongParamCount { expected: usize, got: usize },
    #[error("analytic and finite-difference derivatives disagree for parameter {param}: {diff:.3e} > {tol:.3e}")]
    DerivativeInconsistent { param: usize, diff: f64, tol: f64 },
    #[error("model config parse error: {0}")]
    Parse(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("stencil incomplete: {0}")]
    StencilIncomplete(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("model `{0}` has no factorization")]
    NoFactorization(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A point θ in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn new(theta: impl Into<Vec<f64>>) -> Self {
        Self(theta.into())
    }

    /// `θ + t e_l`.
    pub fn shifted(&self, l: usize, t: f64) -> Self {
        let mut v = self.0.clone();
        v[l] += t;
        Self(v)
    }

    pub fn offset(&self, delta: &[f64]) -> Self {
        Self(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }
}

impl Deref for ParamPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Open box `Π (lo_l, hi_l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamBox(pub Vec<[f64; 2]>);

impl ParamBox {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        Self(bounds)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.0.len() && theta.iter().zip(&self.0).all(|(&t, &[lo, hi])| t > lo && t < hi)
    }
}

/// `ρ = V diag(q) V†` with `V†V = I`, `Y†Y = I`, `V†Y = 0`.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub v: CMatrix,
    pub y: CMatrix,
    pub q: Vec<f64>,
}

impl Factorization {
    pub fn rho(&self) -> CMatrix {
        (&self.v * &CMatrix::from_real_diag(&self.q)) * &self.v.adjoint()
    }

    /// Largest violation among the orthonormality relations and the
    /// reconstruction of `rho`.
    pub fn residual(&self, rho: &CMatrix) -> f64 {
        let vv = (&(&self.v.adjoint() * &self.v) - &CMatrix::identity(self.v.cols())).fro_norm();
        let yy = (&(&self.y.adjoint() * &self.y) - &CMatrix::identity(self.y.cols())).fro_norm();
        let vy = (&self.v.adjoint() * &self.y).fro_norm();
        let rec = (&self.rho() - rho).fro_norm();
        vv.max(yy).max(vy).max(rec)
    }
}

/// Derivative of a factorization along one parameter.
#[derive(Debug, Clone)]
pub struct FactorDerivative {
    pub dv: CMatrix,
    pub dq: Vec<f64>,
}

impl FactorDerivative {
    /// `∂ρ = V diag(∂q) V† + ∂V diag(q) V† + V diag(q) ∂V†`.
    pub fn drho(&self, f: &Factorization) -> CMatrix {
        let q = CMatrix::from_real_diag(&f.q);
        let dq = CMatrix::from_real_diag(&self.dq);
        let vdq = &(&f.v * &dq) * &f.v.adjoint();
        let dvq = &(&self.dv * &q) * &f.v.adjoint();
        &(&vdq + &dvq) + &dvq.adjoint()
    }
}

/// A parameterized state family. Implementations must be pure.
///
/// `eval` may assume `contains(theta)`; callers go through [`StateModel::rho`].
pub trait StateModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn domain(&self) -> &ParamBox;

    fn contains(&self, theta: &[f64]) -> bool {
        self.domain().contains(theta)
    }

    fn eval(&self, theta: &[f64]) -> Result<CMatrix>;

    fn drho(&self, theta: &[f64], l: usize) -> Option<CMatrix> {
        let f = self.factorization(theta)?;
        Some(self.dfactorization(theta, l)?.drho(&f))
    }

    fn factorization(&self, _theta: &[f64]) -> Option<Factorization> {
        None
    }

    fn dfactorization(&self, _theta: &[f64], _l: usize) -> Option<FactorDerivative> {
        None
    }

    /// A known solution `U_θ` of the range-frame PDE, when the model has one.
    fn frame_unitary(&self, _theta: &[f64]) -> Option<CMatrix> {
        None
    }

    /// Finite-difference step the model is tied to (stencil data).
    fn fixed_step(&self) -> Option<f64> {
        None
    }

    /// JSON description of the model and its constants.
    fn descriptor(&self) -> serde_json::Value;

    fn rho(&self, theta: &[f64]) -> Result<CMatrix> {
        if theta.len() != self.n_params() {
            return Err(ModelError::WrongParamCount { expected: self.n_params(), got: theta.len() });
        }
        if !self.contains(theta) {
            return Err(ModelError::OutOfDomain { theta: theta.to_vec() });
        }
        self.eval(theta)
    }
}

/// Hermitian, PSD and unit trace within `tol`.
pub fn check_state(rho: &CMatrix, tol: f64) -> Result<()> {
    if !rho.is_square() || !rho.is_finite() {
        return Err(ModelError::InvalidState(format!("state of shape {:?} is not a finite square matrix", rho.shape())));
    }
    let herm = rho.hermitian_residual();
    if herm > tol * (1.0 + rho.fro_norm()) {
        return Err(ModelError::InvalidState(format!("not Hermitian (residual {herm:.3e})")));
    }
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > tol {
        return Err(ModelError::InvalidState(format!("trace {tr} differs from 1")));
    }
    let eig = herm_eigen(&rho.hermitian_part()).map_err(|e| ModelError::InvalidState(e.to_string()))?;
    if eig.values[0] < -tol {
        return Err(ModelError::InvalidState(format!("negative eigenvalue {:.3e}", eig.values[0])));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Analytic when the model provides it, central differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
    /// Analytic, checked against central differences.
    CrossCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// ρ_θ and its first derivatives at one point.
#[derive(Debug, Clone)]
pub struct StateBundle {
    pub theta: ParamPoint,
    pub rho: CMatrix,
    pub drho: Vec<CMatrix>,
    pub source: DerivativeSource,
}

impl StateBundle {
    /// Checks derivative Hermiticity and trace preservation.
    pub fn check(&self) -> Result<()> {
        for (l, d) in self.drho.iter().enumerate() {
            let herm = d.hermitian_residual();
            if herm > STATE_TOL * (1.0 + d.fro_norm()) {
                return Err(ModelError::InvalidState(format!("∂_{}ρ not Hermitian (residual {herm:.3e})", l + 1)));
            }
            let tr = d.trace().norm();
            if tr > TRACE_TOL {
                return Err(ModelError::InvalidState(format!("tr ∂_{}ρ = {tr:.3e}", l + 1)));
            }
        }
        Ok(())
    }
}

pub fn central_difference(model: &dyn StateModel, theta: &ParamPoint, l: usize, h: f64) -> Result<CMatrix> {
    let plus = model.rho(&theta.shifted(l, h))?;
    let minus = model.rho(&theta.shifted(l, -h))?;
    Ok((&plus - &minus).scale(0.5 / h))
}

/// Models tied to a step (stencils) override `h`.
pub fn eval_bundle(model: &dyn StateModel, theta: &ParamPoint, h: f64, mode: DerivativeMode) -> Result<StateBundle> {
    let h = model.fixed_step().unwrap_or(h);
    let rho = model.rho(theta)?;
    check_state(&rho, STATE_TOL)?;
    let p = model.n_params();
    let analytic: Option<Vec<CMatrix>> = match mode {
        DerivativeMode::FiniteDifference => None,
        _ => (0..p).map(|l| model.drho(theta, l)).collect(),
    };
    if mode == DerivativeMode::CrossCheck && analytic.is_none() {
        return Err(ModelError::InvalidState(format!("model `{}` has no analytic derivative to cross-check", model.name())));
    }
    let (drho, source) = match analytic {
        Some(d) => {
            if mode == DerivativeMode::CrossCheck {
                for (l, a) in d.iter().enumerate() {
                    let fd = central_difference(model, theta, l, h)?;
                    let diff = (&fd - a).max_abs();
                    let tol = 10.0 * (h * h + f64::EPSILON / h) * (1.0 + a.fro_norm());
                    if diff > tol {
                        return Err(ModelError::DerivativeInconsistent { param: l, diff, tol });
                    }
                }
            }
            (d, DerivativeSource::Analytic)
        }
        None => {
            let d = (0..p).map(|l| central_difference(model, theta, l, h)).collect::<Result<Vec<_>>>()?;
            (d, DerivativeSource::FiniteDifference)
        }
    };
    let bundle = StateBundle { theta: theta.clone(), rho, drho, source };
    bundle.check()?;
    Ok(bundle)
}

/// `∂_l V` of the model factorization: analytic when available, otherwise
/// central differences of the (gauge-continuous) factorization frame.
pub fn factor_frame_derivative(model: &dyn StateModel, theta: &ParamPoint, l: usize, h: f64) -> Result<CMatrix> {
    if model.factorization(theta).is_none() {
        return Err(ModelError::NoFactorization(model.name().to_string()));
    }
    if let Some(d) = model.dfactorization(theta, l) {
        return Ok(d.dv);
    }
    let no_fact = || ModelError::NoFactorization(model.name().to_string());
    let plus_t = theta.shifted(l, h);
    let minus_t = theta.shifted(l, -h);
    if !model.contains(&plus_t) || !model.contains(&minus_t) {
        return Err(ModelError::OutOfDomain { theta: theta.0.clone() });
    }
    let plus = model.factorization(&plus_t).ok_or_else(no_fact)?;
    let minus = model.factorization(&minus_t).ok_or_else(no_fact)?;
    Ok((&plus.v - &minus.v).scale(0.5 / h))
}
