//! Every numeric gate used by the pipeline, with its default.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Finite-difference step.
    pub h: f64,
    /// State invariants (Hermitian, PSD, unit trace).
    pub state: f64,
    /// `|tr ∂ρ|`.
    pub trace: f64,
    /// Eigenvalues below this are treated as null.
    pub rank: f64,
    /// Minimum gap ratio around the rank threshold.
    pub gamma_min: f64,
    /// `‖(∂ρ)_00‖_F` before a rank drift is declared.
    pub nullblock: f64,
    /// SLD block equation residuals, relative to `1 + ‖∂ρ‖_F`.
    pub sld: f64,
    /// Conditions 1, 3 and partial commutativity; realness gates on constants.
    pub cond: f64,
    /// Condition 4 column proportionality.
    pub c4: f64,
    /// Vanishing columns, blocks and residuals, relative to the operator scale.
    pub zero: f64,
    /// Condition 2 residual (finite-difference limited).
    pub pde: f64,
    /// Outcome probabilities at or below this are null.
    pub p: f64,
    /// Saturation identities, relative to `1 + ‖F‖_max`.
    pub sat: f64,
    /// Joint eigenvalue clustering, relative to `1 + max |λ|`.
    pub cluster: f64,
    /// POVM completeness and positivity.
    pub povm: f64,
    /// Projector identities and Lemma 2 block structure.
    pub proj: f64,
    /// Singular value cutoff for pseudoinverses, relative to `σ_max`.
    pub sv: f64,
    /// Unitarity of supplied `W` and `U`.
    pub unitary: f64,
    /// Largest admissible condition number of the classical Fisher matrix.
    pub fisher_cond: f64,
    /// Monte Carlo covariance agreement, `‖emp − pred‖_max / ‖pred‖_max`.
    pub mc: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            h: 1e-5,
            state: 1e-10,
            trace: 1e-7,
            rank: 1e-8,
            gamma_min: 1e4,
            nullblock: 1e-6,
            sld: 1e-9,
            cond: 1e-8,
            c4: 1e-8,
            zero: 1e-8,
            pde: 1e-5,
            p: 1e-10,
            sat: 1e-7,
            cluster: 1e-7,
            povm: 1e-9,
            proj: 1e-8,
            sv: 1e-10,
            unitary: 1e-8,
            fisher_cond: 1e12,
            mc: 0.1,
        }
    }
}

impl Tolerances {
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Override one entry by name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), String> {
        if !value.is_finite() || value <= 0.0 {
            return Err(format!("tolerance `{key}` must be positive and finite, got {value}"));
        }
        let mut map = match serde_json::to_value(*self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("tolerances serialize to an object"),
        };
        if !map.contains_key(key) {
            return Err(format!("unknown tolerance `{key}` (known: {})", Self::keys().join(", ")));
        }
        map.insert(key.to_string(), value.into());
        *self = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Parses `key=value`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), String> {
        let (k, v) = spec.split_once('=').ok_or_else(|| format!("expected key=value, got `{spec}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
        self.set(k.trim(), v)
    }
}
