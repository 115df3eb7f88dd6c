//! Monte Carlo estimation with a one-step score estimator, and the
//! `F_c(θ+δ) → F(θ)` convergence study.
//!
//! Sampling uses `ChaCha8Rng` seeded with the run seed; trial `t` draws
//! from stream `t` of that seed, so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, RMatrix};
use crate::model::{eval_bundle, DerivativeMode, ModelError, ParamPoint, StateBundle, StateModel};
use crate::pipeline::{analyze_point, PipelineError};
use crate::povm::{classical_fi, Povm};
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("outcome {index} has probability {p:.3e} < 0")]
    NegativeProbability { index: usize, p: f64 },
    #[error("outcome probabilities sum to {sum}")]
    NotNormalized { sum: f64 },
    #[error("classical Fisher matrix is singular (condition {condition:.3e}); unidentifiable direction {direction:?}")]
    SingularFisher { direction: Vec<f64>, condition: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, EstimateError>;

/// Outcome probabilities for sampling. Values at or below `τ_p` (null
/// outcomes and round-off negatives) are set to zero and the rest
/// renormalized.
pub fn outcome_probabilities(povm: &Povm, rho: &CMatrix, tols: &Tolerances) -> Result<Vec<f64>> {
    let tol = tols.povm;
    let mut p = povm.probabilities(rho);
    for (index, x) in p.iter_mut().enumerate() {
        if *x < -tol {
            return Err(EstimateError::NegativeProbability { index, p: *x });
        }
        if *x <= tols.p {
            *x = 0.0;
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(EstimateError::NotNormalized { sum });
    }
    p.iter_mut().for_each(|x| *x /= sum);
    Ok(p)
}

/// Multinomial counts by inverse-CDF sampling of `n` outcomes.
pub fn sample_counts<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &x in p {
        acc += x;
        cdf.push(acc);
    }
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|&c| c <= u).min(last);
        counts[k] += 1;
    }
    counts
}

pub fn sample_povm(povm: &Povm, rho: &CMatrix, n: u64, seed: u64, tols: &Tolerances) -> Result<Vec<u64>> {
    let p = outcome_probabilities(povm, rho, tols)?;
    Ok(sample_counts(&p, n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// `F⁻¹`, or `SingularFisher` with the eigenvector of the smallest
/// eigenvalue when the condition number exceeds `max_cond`.
pub fn fisher_inverse(f: &RMatrix, max_cond: f64) -> Result<RMatrix> {
    let singular = |direction: Vec<f64>, condition: f64| EstimateError::SingularFisher { direction, condition };
    let (vals, vecs) = f.sym_eigen().map_err(|_| singular(vec![], f64::INFINITY))?;
    let (min, max) = (vals[0], *vals.last().unwrap());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(max > 0.0) || condition > max_cond {
        let mut d = vecs[0].clone();
        let pivot = d.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            d.iter_mut().for_each(|x| *x = -*x);
        }
        d.iter_mut().for_each(|x| {
            if x.abs() < 1e-12 {
                *x = 0.0
            }
        });
        return Err(singular(d, condition));
    }
    let (inv, _) = f.spd_inverse().map_err(|_| singular(vecs[0].clone(), condition))?;
    Ok(inv)
}

/// One-step estimator `θ̂ = θ + F_c⁻¹ s / N` about a fixed point, with
/// score `s_l = Σ_k n_k ∂_l ln p_k` over outcomes with `p_k > τ_p`.
#[derive(Debug, Clone)]
pub struct OneStep {
    pub theta: Vec<f64>,
    pub probabilities: Vec<f64>,
    dlogp: Vec<Vec<f64>>,
    pub fc_inv: RMatrix,
}

impl OneStep {
    pub fn new(povm: &Povm, bundle: &StateBundle, fc: &RMatrix, tols: &Tolerances) -> Result<Self> {
        let fc_inv = fisher_inverse(fc, tols.fisher_cond)?;
        let probabilities = outcome_probabilities(povm, &bundle.rho, tols)?;
        let dlogp = povm
            .effects
            .iter()
            .zip(&probabilities)
            .map(|(e, &pk)| {
                bundle.drho.iter().map(|d| if pk > tols.p { (d * e).trace().re / pk } else { 0.0 }).collect()
            })
            .collect();
        Ok(Self { theta: bundle.theta.0.clone(), probabilities, dlogp, fc_inv })
    }

    pub fn estimate(&self, counts: &[u64]) -> Vec<f64> {
        let n: u64 = counts.iter().sum();
        let p = self.theta.len();
        let mut s = vec![0.0; p];
        for (k, &c) in counts.iter().enumerate() {
            for (l, sl) in s.iter_mut().enumerate() {
                *sl += c as f64 * self.dlogp[k][l];
            }
        }
        let step = self.fc_inv.matvec(&s);
        self.theta.iter().zip(step).map(|(t, d)| t + d / n as f64).collect()
    }
}

pub fn one_step_estimate(counts: &[u64], povm: &Povm, bundle: &StateBundle, fc: &RMatrix, tols: &Tolerances) -> Result<Vec<f64>> {
    Ok(OneStep::new(povm, bundle, fc, tols)?.estimate(counts))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Copies per trial.
    pub n: u64,
    /// Trials.
    pub r: usize,
    pub delta: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self, n_params: usize) -> Result<()> {
        if self.n < 1 {
            return Err(EstimateError::InvalidConfig("N must be at least 1".into()));
        }
        if self.r < 2 {
            return Err(EstimateError::InvalidConfig("R must be at least 2".into()));
        }
        if self.delta.len() != n_params {
            return Err(EstimateError::InvalidConfig(format!("delta has {} entries, expected {n_params}", self.delta.len())));
        }
        if self.delta.iter().any(|x| !x.is_finite()) {
            return Err(EstimateError::InvalidConfig("delta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub theta_sim: ParamPoint,
    pub n: u64,
    pub r: usize,
    pub seed: u64,
    pub probabilities: Vec<f64>,
    pub f_c: RMatrix,
    pub emp_cov: RMatrix,
    /// `F_c(θ_sim)⁻¹ / N`.
    pub pred_cov: RMatrix,
    /// `‖emp_cov − pred_cov‖_max / ‖pred_cov‖_max`.
    pub rel_err: f64,
    /// Expected fluctuation of `rel_err`, `√(2/R)`.
    pub stat_scale: f64,
    /// Mean of `θ̂ − θ_sim`.
    pub mean_bias: Vec<f64>,
    /// `3 √(max diag pred_cov / R)`.
    pub bias_bound: Vec<f64>,
    pub excluded_outcome_mass: f64,
    /// `F(θ_sim)⁻¹ / N`, when the QFIM is available there.
    pub qcrb_cov: Option<RMatrix>,
    /// Smallest eigenvalue of `emp_cov − qcrb_cov`.
    pub qcrb_min_gap: Option<f64>,
}

fn covariance(samples: &[Vec<f64>], center: &[f64]) -> (RMatrix, Vec<f64>) {
    let p = center.len();
    let r = samples.len() as f64;
    let mut mean = vec![0.0; p];
    for s in samples {
        for l in 0..p {
            mean[l] += (s[l] - center[l]) / r;
        }
    }
    let mut cov = RMatrix::zeros(p, p);
    for s in samples {
        for l in 0..p {
            for m in 0..p {
                cov[(l, m)] += (s[l] - center[l] - mean[l]) * (s[m] - center[m] - mean[m]) / (r - 1.0);
            }
        }
    }
    (cov, mean)
}

pub fn run_trials(model: &dyn StateModel, povm: &Povm, theta: &ParamPoint, cfg: &SimConfig, tols: &Tolerances) -> Result<SimResult> {
    cfg.validate(model.n_params())?;
    let theta_sim = theta.offset(&cfg.delta);
    if !model.contains(&theta_sim) {
        return Err(ModelError::OutOfDomain { theta: theta_sim.0 }.into());
    }
    let h = model.fixed_step().unwrap_or(tols.h);
    let bundle = eval_bundle(model, &theta_sim, h, DerivativeMode::Auto)?;
    let fc = classical_fi(povm, &bundle, tols.p);
    let est = OneStep::new(povm, &bundle, &fc.f_c, tols)?;
    let samples: Vec<Vec<f64>> = (0..cfg.r)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            est.estimate(&sample_counts(&est.probabilities, cfg.n, &mut rng))
        })
        .collect();
    let (emp_cov, mean_bias) = covariance(&samples, &theta_sim);
    let pred_cov = est.fc_inv.scale(1.0 / cfg.n as f64);
    let rel_err = (&emp_cov - &pred_cov).max_abs() / pred_cov.max_abs();
    let max_diag = (0..pred_cov.rows()).map(|l| pred_cov[(l, l)]).fold(0.0, f64::max);
    let bias_bound = vec![3.0 * (max_diag / cfg.r as f64).sqrt(); mean_bias.len()];

    let qcrb_cov = analyze_point(model, &theta_sim, tols, DerivativeMode::Auto)
        .ok()
        .and_then(|a| a.qfim.f.spd_inverse().ok())
        .map(|(inv, _)| inv.scale(1.0 / cfg.n as f64));
    let qcrb_min_gap = qcrb_cov.as_ref().and_then(|q| (&emp_cov - q).sym_eigen().ok()).map(|(v, _)| v[0]);

    Ok(SimResult {
        theta_sim,
        n: cfg.n,
        r: cfg.r,
        seed: cfg.seed,
        probabilities: est.probabilities.clone(),
        f_c: fc.f_c,
        emp_cov,
        pred_cov,
        rel_err,
        stat_scale: (2.0 / cfg.r as f64).sqrt(),
        mean_bias,
        bias_bound,
        excluded_outcome_mass: fc.excluded_mass,
        qcrb_cov,
        qcrb_min_gap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub delta: Vec<f64>,
    /// `‖δ‖₂`.
    pub delta_norm: f64,
    pub f_c: RMatrix,
    /// `‖F_c(θ+δ) − F(θ)‖_max`.
    pub max_abs_dev: f64,
    pub excluded_outcomes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub theta: ParamPoint,
    pub f: RMatrix,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceStudy {
    /// Deviations strictly decrease as the rows are listed.
    pub fn is_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].max_abs_dev < w[0].max_abs_dev)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,max_abs_dev\n");
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e}\n", r.delta_norm, r.max_abs_dev));
        }
        out
    }
}

pub fn fc_convergence_study(
    model: &dyn StateModel,
    povm: &Povm,
    theta: &ParamPoint,
    deltas: &[Vec<f64>],
    tols: &Tolerances,
) -> Result<ConvergenceStudy> {
    let f = analyze_point(model, theta, tols, DerivativeMode::Auto)?.qfim.f;
    let h = model.fixed_step().unwrap_or(tols.h);
    let rows = deltas
        .iter()
        .map(|delta| {
            if delta.len() != model.n_params() {
                return Err(EstimateError::InvalidConfig(format!("delta {delta:?} has the wrong length")));
            }
            let bundle = eval_bundle(model, &theta.offset(delta), h, DerivativeMode::Auto)?;
            let fc = classical_fi(povm, &bundle, tols.p);
            Ok(ConvergenceRow {
                delta: delta.clone(),
                delta_norm: delta.iter().map(|x| x * x).sum::<f64>().sqrt(),
                max_abs_dev: (&fc.f_c - &f).max_abs(),
                f_c: fc.f_c,
                excluded_outcomes: fc.excluded,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy { theta: theta.clone(), f, rows })
}

/// `δ = t (1, …, 1) / √p` for each `t`.
pub fn diagonal_deltas(p: usize, ts: &[f64]) -> Vec<Vec<f64>> {
    let s = 1.0 / (p as f64).sqrt();
    ts.iter().map(|&t| vec![t * s; p]).collect()
}

#[cfg(test)]
mod tests;
