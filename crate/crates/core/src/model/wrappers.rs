use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::{FactorDerivative, Factorization, ParamBox, Result, StateModel};
use crate::linalg::{herm_eigen, unitary_exp, CMatrix, C64};

/// Sub-model with some parameters pinned to constants.
pub struct Restricted {
    inner: Box<dyn StateModel>,
    fixed: Vec<Option<f64>>,
    free: Vec<usize>,
    domain: ParamBox,
    name: String,
}

impl Restricted {
    /// `fixed[l] = Some(x)` pins θ_l = x; `None` keeps it free.
    pub fn new(inner: Box<dyn StateModel>, fixed: Vec<Option<f64>>) -> Self {
        assert_eq!(fixed.len(), inner.n_params(), "one entry per parameter");
        let free: Vec<usize> = (0..fixed.len()).filter(|&l| fixed[l].is_none()).collect();
        assert!(!free.is_empty(), "at least one parameter must stay free");
        let domain = ParamBox::new(free.iter().map(|&l| inner.domain().0[l]).collect());
        let name = format!("{}|restricted", inner.name());
        Self { inner, fixed, free, domain, name }
    }

    fn expand(&self, theta: &[f64]) -> Vec<f64> {
        let mut it = theta.iter();
        self.fixed.iter().map(|f| f.unwrap_or_else(|| *it.next().expect("free coordinate"))).collect()
    }
}

impl StateModel for Restricted {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn n_params(&self) -> usize {
        self.free.len()
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.free.len() && self.inner.contains(&self.expand(theta))
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        self.inner.eval(&self.expand(theta))
    }
    fn drho(&self, theta: &[f64], l: usize) -> Option<CMatrix> {
        self.inner.drho(&self.expand(theta), self.free[l])
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        self.inner.factorization(&self.expand(theta))
    }
    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        self.inner.dfactorization(&self.expand(theta), self.free[l])
    }
    fn frame_unitary(&self, theta: &[f64]) -> Option<CMatrix> {
        self.inner.frame_unitary(&self.expand(theta))
    }
    fn descriptor(&self) -> Value {
        json!({"model": self.name, "inner": self.inner.descriptor(), "fixed": self.fixed})
    }
}

/// Reparameterization `θ'_l = a_l θ_l`.
pub struct Rescaled {
    inner: Box<dyn StateModel>,
    scale: Vec<f64>,
    domain: ParamBox,
    name: String,
}

impl Rescaled {
    pub fn new(inner: Box<dyn StateModel>, scale: Vec<f64>) -> Self {
        assert_eq!(scale.len(), inner.n_params(), "one scale per parameter");
        assert!(scale.iter().all(|a| *a != 0.0 && a.is_finite()), "scales must be finite and non-zero");
        let domain = ParamBox::new(
            inner
                .domain()
                .0
                .iter()
                .zip(&scale)
                .map(|(&[lo, hi], &a)| if a > 0.0 { [a * lo, a * hi] } else { [a * hi, a * lo] })
                .collect(),
        );
        let name = format!("{}|rescaled", inner.name());
        Self { inner, scale, domain, name }
    }

    fn original(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.scale).map(|(t, a)| t / a).collect()
    }
}

impl StateModel for Rescaled {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn n_params(&self) -> usize {
        self.scale.len()
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.scale.len() && self.inner.contains(&self.original(theta))
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        self.inner.eval(&self.original(theta))
    }
    fn drho(&self, theta: &[f64], l: usize) -> Option<CMatrix> {
        Some(self.inner.drho(&self.original(theta), l)?.scale(1.0 / self.scale[l]))
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        self.inner.factorization(&self.original(theta))
    }
    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let d = self.inner.dfactorization(&self.original(theta), l)?;
        let a = self.scale[l];
        Some(FactorDerivative { dv: d.dv.scale(1.0 / a), dq: d.dq.iter().map(|x| x / a).collect() })
    }
    fn descriptor(&self) -> Value {
        json!({"model": self.name, "inner": self.inner.descriptor(), "scale": self.scale})
    }
}

/// Fixed spectrum moved along a unitary path:
/// `ρ_θ = U_θ diag(q, 0) U_θ†` with `U_θ = exp(i Σ_l θ_l H_l) U_0`.
#[derive(Debug, Clone)]
pub struct UnitaryOrbit {
    generators: Vec<CMatrix>,
    u0: CMatrix,
    q: Vec<f64>,
    domain: ParamBox,
}

impl UnitaryOrbit {
    pub fn new(generators: Vec<CMatrix>, u0: CMatrix, q: Vec<f64>) -> Self {
        let p = generators.len();
        assert!(p >= 1 && q.len() <= u0.cols());
        Self { generators, u0, q, domain: ParamBox::new(vec![[-1.0, 1.0]; p]) }
    }

    /// Random generators, random initial frame and a random spectrum of
    /// `rank` weights bounded away from zero.
    pub fn random(seed: u64, n: usize, rank: usize, p: usize) -> Self {
        assert!(rank >= 1 && rank <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let herm = |rng: &mut ChaCha8Rng| {
            CMatrix::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).hermitian_part()
        };
        let u0 = unitary_exp(&herm(&mut rng).scale(2.0)).expect("Hermitian generator");
        let generators: Vec<CMatrix> = (0..p).map(|_| herm(&mut rng).scale(0.5)).collect();
        let mut q: Vec<f64> = (0..rank).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= total);
        Self::new(generators, u0, q)
    }

    fn generator(&self, theta: &[f64]) -> CMatrix {
        let n = self.u0.rows();
        let mut h = CMatrix::zeros(n, n);
        for (t, g) in theta.iter().zip(&self.generators) {
            h += &g.scale(*t);
        }
        h
    }

    fn frame(&self, theta: &[f64]) -> CMatrix {
        &unitary_exp(&self.generator(theta)).expect("Hermitian generator") * &self.u0
    }

    /// `∂_l exp(iH)` via the divided-difference formula in the eigenbasis of `H`.
    fn dexp(&self, theta: &[f64], l: usize) -> CMatrix {
        let e = herm_eigen(&self.generator(theta)).expect("Hermitian generator");
        let n = e.values.len();
        let x = self.generators[l].congruence(&e.vectors);
        let i = C64::new(0.0, 1.0);
        let g = CMatrix::from_fn(n, n, |j, k| {
            let (a, b) = (e.values[j], e.values[k]);
            let fa = (i * a).exp();
            if (a - b).abs() <= 1e-9 * (1.0 + a.abs()) {
                i * fa
            } else {
                (fa - (i * b).exp()) / (a - b)
            }
        });
        let inner = CMatrix::from_fn(n, n, |j, k| g[(j, k)] * x[(j, k)]);
        &(&e.vectors * &inner) * &e.vectors.adjoint()
    }
}

impl StateModel for UnitaryOrbit {
    fn name(&self) -> &str {
        "unitary_orbit"
    }
    fn dim(&self) -> usize {
        self.u0.rows()
    }
    fn n_params(&self) -> usize {
        self.generators.len()
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        Ok(self.factorization(theta).expect("orbit is factorized").rho())
    }
    fn factorization(&self, theta: &[f64]) -> Option<Factorization> {
        let u = self.frame(theta);
        let r = self.q.len();
        let n = u.cols();
        Some(Factorization {
            v: u.select_cols(&(0..r).collect::<Vec<_>>()),
            y: u.select_cols(&(r..n).collect::<Vec<_>>()),
            q: self.q.clone(),
        })
    }
    fn dfactorization(&self, theta: &[f64], l: usize) -> Option<FactorDerivative> {
        let du = &self.dexp(theta, l) * &self.u0;
        let r = self.q.len();
        Some(FactorDerivative { dv: du.select_cols(&(0..r).collect::<Vec<_>>()), dq: vec![0.0; r] })
    }
    fn descriptor(&self) -> Value {
        json!({"model": "unitary_orbit", "dim": self.dim(), "q": self.q})
    }
}
