use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use serde_json::{json, Map, Value};

use super::{FactorDerivative, Factorization, ModelError, ParamBox, Result, StateModel};
use crate::linalg::{CMatrix, C64};

const I: C64 = C64::new(0.0, 1.0);

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Rank-2 qutrit family with weights `(θ1, 1−θ1)` on
/// `ψ1 = e2` and `ψ2 = (d e^{iφ}, 0, √(1−|d|²))`, `φ = c1 θ1 + c2 θ2`.
#[derive(Debug, Clone)]
pub struct Example2 {
    d: C64,
    c: [f64; 2],
    domain: ParamBox,
}

impl Example2 {
    pub fn new(d: C64, c1: f64, c2: f64) -> Result<Self> {
        let m = d.norm();
        if !(m > 0.0 && m < 1.0) {
            return Err(ModelError::InvalidState(format!("example2 requires 0 < |d| < 1, got |d| = {m}")));
        }
        if c1 == 0.0 || c2 == 0.0 || !c1.is_finite() || !c2.is_finite() {
            return Err(ModelError::InvalidState("example2 requires non-zero finite c1, c2".into()));
        }
        Ok(Self { d, c: [c1, c2], domain: ParamBox::new(vec![[0.0, 1.0], [0.0, 1.0]]) })
    }

    pub fn with_domain(mut self, domain: ParamBox) -> Self {
        self.domain = domain;
        self
    }

    fn phase(&self, theta: &[f64]) -> f64 {
        self.c[0] * theta[0] + self.c[1] * theta[1]
    }

    fn s(&self) -> f64 {
        (1.0 - self.d.norm_sqr()).sqrt()
    }
}

impl StateModel for Example2 {
    fn name(&self) -> &str {
        "example2"
    }
    fn dim(&self) -> usize {
        3
    }
    fn n_params(&self) -> usize {
        2
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }

    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        Ok(self.factorization(theta).expect("example2 is factorized").rho())
    }

    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        let e = C64::from_polar(1.0, self.phase(theta));
        let s = self.s();
        let z = re(0.0);
        let v = CMatrix::from_rows(vec![vec![z, self.d * e], vec![re(1.0), z], vec![z, re(s)]]);
        let y = CMatrix::column(&[re(s), z, -self.d.conj() * e.conj()]);
        Some(Factorization { v, y, q: vec![theta[0], 1.0 - theta[0]] })
    }

    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let e = C64::from_polar(1.0, self.phase(theta));
        let mut dv = CMatrix::zeros(3, 2);
        dv[(0, 1)] = I * self.c[l] * self.d * e;
        let dq = if l == 0 { vec![1.0, -1.0] } else { vec![0.0, 0.0] };
        Some(FactorDerivative { dv, dq })
    }

    fn frame_unitary(&self, theta: &[f64]) -> Option<CMatrix> {
        let angle = self.d.norm_sqr() * self.phase(theta);
        Some(CMatrix::from_diag(&[re(1.0), C64::from_polar(1.0, angle)]))
    }

    fn descriptor(&self) -> Value {
        json!({"model": "example2", "d": [self.d.re, self.d.im], "c1": self.c[0], "c2": self.c[1], "box": self.domain})
    }
}

/// Range fixed to `span{e1, e2}` in C³ with frame `V = [e1 e2]·diag(1, e^{iθ2})`
/// and weights `(θ1, 1−θ1)`.
#[derive(Debug, Clone)]
pub struct FixedRange {
    domain: ParamBox,
}

impl Default for FixedRange {
    fn default() -> Self {
        Self { domain: ParamBox::new(vec![[0.0, 1.0], [-PI, PI]]) }
    }
}

impl FixedRange {
    pub fn with_domain(mut self, domain: ParamBox) -> Self {
        self.domain = domain;
        self
    }
}

impl StateModel for FixedRange {
    fn name(&self) -> &str {
        "fixed_range"
    }
    fn dim(&self) -> usize {
        3
    }
    fn n_params(&self) -> usize {
        2
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        Ok(self.factorization(theta).expect("fixed_range is factorized").rho())
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        let mut v = CMatrix::zeros(3, 2);
        v[(0, 0)] = re(1.0);
        v[(1, 1)] = C64::from_polar(1.0, theta[1]);
        let y = CMatrix::column(&[re(0.0), re(0.0), re(1.0)]);
        Some(Factorization { v, y, q: vec![theta[0], 1.0 - theta[0]] })
    }
    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let mut dv = CMatrix::zeros(3, 2);
        if l == 1 {
            dv[(1, 1)] = I * C64::from_polar(1.0, theta[1]);
        }
        let dq = if l == 0 { vec![1.0, -1.0] } else { vec![0.0, 0.0] };
        Some(FactorDerivative { dv, dq })
    }
    fn descriptor(&self) -> Value {
        json!({"model": "fixed_range", "box": self.domain})
    }
}

/// `ρ = diag(θ1, θ2, 1−θ1−θ2)`.
#[derive(Debug, Clone)]
pub struct ClassicalDiag {
    domain: ParamBox,
}

impl Default for ClassicalDiag {
    fn default() -> Self {
        Self { domain: ParamBox::new(vec![[0.0, 1.0], [0.0, 1.0]]) }
    }
}

impl ClassicalDiag {
    pub fn with_domain(mut self, domain: ParamBox) -> Self {
        self.domain = domain;
        self
    }
}

impl StateModel for ClassicalDiag {
    fn name(&self) -> &str {
        "classical_diag"
    }
    fn dim(&self) -> usize {
        3
    }
    fn n_params(&self) -> usize {
        2
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn contains(&self, theta: &[f64]) -> bool {
        self.domain.contains(theta) && theta[0] + theta[1] < 1.0
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        Ok(CMatrix::from_real_diag(&[theta[0], theta[1], 1.0 - theta[0] - theta[1]]))
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        Some(Factorization {
            v: CMatrix::identity(3),
            y: CMatrix::zeros(3, 0),
            q: vec![theta[0], theta[1], 1.0 - theta[0] - theta[1]],
        })
    }
    fn dfactorization(&self, _theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let dq = if l == 0 { vec![1.0, 0.0, -1.0] } else { vec![0.0, 1.0, -1.0] };
        Some(FactorDerivative { dv: CMatrix::zeros(3, 3), dq })
    }
    fn descriptor(&self) -> Value {
        json!({"model": "classical_diag", "box": self.domain})
    }
}

/// Full-rank qubit `ρ = (I + θ1 σx + θ2 σy)/2`.
#[derive(Debug, Clone)]
pub struct QubitXY {
    domain: ParamBox,
}

impl Default for QubitXY {
    fn default() -> Self {
        Self { domain: ParamBox::new(vec![[-1.0, 1.0], [-1.0, 1.0]]) }
    }
}

impl QubitXY {
    pub fn with_domain(mut self, domain: ParamBox) -> Self {
        self.domain = domain;
        self
    }
}

impl StateModel for QubitXY {
    fn name(&self) -> &str {
        "qubit_xy"
    }
    fn dim(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        2
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn contains(&self, theta: &[f64]) -> bool {
        self.domain.contains(theta) && theta[0].hypot(theta[1]) < 1.0
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        let off = C64::new(theta[0], -theta[1]) * 0.5;
        Ok(CMatrix::from_rows(vec![vec![re(0.5), off], vec![off.conj(), re(0.5)]]))
    }
    fn drho(&self, _theta: &[f64], l: usize) -> Option<CMatrix> {
        let off = if l == 0 { re(0.5) } else { C64::new(0.0, -0.5) };
        Some(CMatrix::from_rows(vec![vec![re(0.0), off], vec![off.conj(), re(0.0)]]))
    }
    /// Defined away from the maximally mixed point. Eigenvectors
    /// `(1, ±e^{iα})/√2` with `α = atan2(θ2, θ1)`.
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        let r = theta[0].hypot(theta[1]);
        if r == 0.0 {
            return None;
        }
        let e = C64::from_polar(FRAC_1_SQRT_2, theta[1].atan2(theta[0]));
        let v = CMatrix::from_rows(vec![vec![re(FRAC_1_SQRT_2), re(FRAC_1_SQRT_2)], vec![e, -e]]);
        Some(Factorization { v, y: CMatrix::zeros(2, 0), q: vec![0.5 * (1.0 + r), 0.5 * (1.0 - r)] })
    }
    fn descriptor(&self) -> Value {
        json!({"model": "qubit_xy", "box": self.domain})
    }
}

/// Pure qubit `ψ = (cos θ1, e^{iθ2} sin θ1)`.
#[derive(Debug, Clone)]
pub struct PureState {
    domain: ParamBox,
}

impl Default for PureState {
    fn default() -> Self {
        Self { domain: ParamBox::new(vec![[0.0, FRAC_PI_2], [-PI, PI]]) }
    }
}

impl PureState {
    pub fn with_domain(mut self, domain: ParamBox) -> Self {
        self.domain = domain;
        self
    }
}

impl StateModel for PureState {
    fn name(&self) -> &str {
        "pure_state"
    }
    fn dim(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        2
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        Ok(self.factorization(theta).expect("pure_state is factorized").rho())
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        let (s, c) = theta[0].sin_cos();
        let e = C64::from_polar(1.0, theta[1]);
        let v = CMatrix::column(&[re(c), e * s]);
        let y = CMatrix::column(&[-e.conj() * s, re(c)]);
        Some(Factorization { v, y, q: vec![1.0] })
    }
    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let (s, c) = theta[0].sin_cos();
        let e = C64::from_polar(1.0, theta[1]);
        let dv = if l == 0 {
            CMatrix::column(&[re(-s), e * c])
        } else {
            CMatrix::column(&[re(0.0), I * e * s])
        };
        Some(FactorDerivative { dv, dq: vec![0.0] })
    }
    fn descriptor(&self) -> Value {
        json!({"model": "pure_state", "box": self.domain})
    }
}

/// Registry entry: builds a model from the constants in a config object.
pub struct ModelDescriptor {
    pub name: &'static str,
    pub summary: &'static str,
    pub constants: &'static [&'static str],
    pub build: fn(&Map<String, Value>) -> Result<Box<dyn StateModel>>,
}

fn number(cfg: &Map<String, Value>, key: &str) -> Result<f64> {
    cfg.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| ModelError::Parse(format!("missing or non-numeric `{key}`")))
}

fn complex(cfg: &Map<String, Value>, key: &str) -> Result<C64> {
    match cfg.get(key) {
        Some(Value::Number(n)) => Ok(re(n.as_f64().unwrap_or(f64::NAN))),
        Some(Value::Array(a)) if a.len() == 2 => match (a[0].as_f64(), a[1].as_f64()) {
            (Some(x), Some(y)) => Ok(C64::new(x, y)),
            _ => Err(ModelError::Parse(format!("`{key}` must be [re, im]"))),
        },
        _ => Err(ModelError::Parse(format!("missing or malformed `{key}` (expected [re, im])"))),
    }
}

pub(super) fn parse_box(cfg: &Map<String, Value>, p: usize) -> Result<Option<ParamBox>> {
    let Some(v) = cfg.get("box") else { return Ok(None) };
    let b: ParamBox = serde_json::from_value(v.clone()).map_err(|e| ModelError::Parse(format!("`box`: {e}")))?;
    if b.dim() != p || b.0.iter().any(|[lo, hi]| !(lo < hi)) {
        return Err(ModelError::Parse(format!("`box` must list {p} intervals [lo, hi] with lo < hi")));
    }
    Ok(Some(b))
}

fn build_example2(cfg: &Map<String, Value>) -> Result<Box<dyn StateModel>> {
    let mut m = Example2::new(complex(cfg, "d")?, number(cfg, "c1")?, number(cfg, "c2")?)?;
    if let Some(b) = parse_box(cfg, 2)? {
        m = m.with_domain(b);
    }
    Ok(Box::new(m))
}

fn build_fixed_range(cfg: &Map<String, Value>) -> Result<Box<dyn StateModel>> {
    let mut m = FixedRange::default();
    if let Some(b) = parse_box(cfg, 2)? {
        m = m.with_domain(b);
    }
    Ok(Box::new(m))
}

fn build_classical_diag(cfg: &Map<String, Value>) -> Result<Box<dyn StateModel>> {
    let mut m = ClassicalDiag::default();
    if let Some(b) = parse_box(cfg, 2)? {
        m = m.with_domain(b);
    }
    Ok(Box::new(m))
}

fn build_qubit_xy(cfg: &Map<String, Value>) -> Result<Box<dyn StateModel>> {
    let mut m = QubitXY::default();
    if let Some(b) = parse_box(cfg, 2)? {
        m = m.with_domain(b);
    }
    Ok(Box::new(m))
}

fn build_pure_state(cfg: &Map<String, Value>) -> Result<Box<dyn StateModel>> {
    let mut m = PureState::default();
    if let Some(b) = parse_box(cfg, 2)? {
        m = m.with_domain(b);
    }
    Ok(Box::new(m))
}

pub fn builtin_registry() -> Vec<ModelDescriptor> {
    vec![
        ModelDescriptor {
            name: "example2",
            summary: "rank-2 qutrit with a θ-dependent phase on the second range vector",
            constants: &["d", "c1", "c2"],
            build: build_example2,
        },
        ModelDescriptor {
            name: "fixed_range",
            summary: "rank-2 qutrit whose range is a fixed plane, frame diag(1, e^{iθ2})",
            constants: &[],
            build: build_fixed_range,
        },
        ModelDescriptor {
            name: "classical_diag",
            summary: "diagonal qutrit diag(θ1, θ2, 1−θ1−θ2)",
            constants: &[],
            build: build_classical_diag,
        },
        ModelDescriptor {
            name: "qubit_xy",
            summary: "full-rank qubit with Bloch vector (θ1, θ2, 0)",
            constants: &[],
            build: build_qubit_xy,
        },
        ModelDescriptor {
            name: "pure_state",
            summary: "pure qubit (cos θ1, e^{iθ2} sin θ1)",
            constants: &[],
            build: build_pure_state,
        },
    ]
}
