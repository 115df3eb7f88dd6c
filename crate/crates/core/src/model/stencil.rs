use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_state, ModelError, ParamBox, ParamPoint, Result, StateModel, STATE_TOL};
use crate::linalg::CMatrix;

/// On-disk stencil data: ρ at θ and at θ ± h e_l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilConfig {
    pub model: String,
    pub h: f64,
    pub center: Vec<f64>,
    pub rho_center: CMatrix,
    pub rho_plus: Vec<CMatrix>,
    pub rho_minus: Vec<CMatrix>,
}

/// Tabulates `model` on the central-difference stencil of `theta`.
pub fn stencil_config(model: &dyn StateModel, theta: &ParamPoint, h: f64) -> Result<StencilConfig> {
    let p = model.n_params();
    let rho_plus = (0..p).map(|l| model.rho(&theta.shifted(l, h))).collect::<Result<Vec<_>>>()?;
    let rho_minus = (0..p).map(|l| model.rho(&theta.shifted(l, -h))).collect::<Result<Vec<_>>>()?;
    Ok(StencilConfig {
        model: "stencil".into(),
        h,
        center: theta.0.clone(),
        rho_center: model.rho(theta)?,
        rho_plus,
        rho_minus,
    })
}

/// Table-lookup model defined only on its stencil points.
#[derive(Debug, Clone)]
pub struct StencilModel {
    cfg: StencilConfig,
    domain: ParamBox,
    points: Vec<(ParamPoint, usize)>,
    table: Vec<CMatrix>,
}

impl StencilModel {
    pub fn new(cfg: StencilConfig) -> Result<Self> {
        let p = cfg.center.len();
        if p == 0 {
            return Err(ModelError::Parse("stencil `center` must have at least one coordinate".into()));
        }
        if !(cfg.h > 0.0 && cfg.h.is_finite()) {
            return Err(ModelError::Parse(format!("stencil step h = {} must be positive", cfg.h)));
        }
        for (name, list) in [("rho_plus", &cfg.rho_plus), ("rho_minus", &cfg.rho_minus)] {
            if list.len() != p {
                return Err(ModelError::StencilIncomplete(format!("`{name}` has {} entries, expected {p}", list.len())));
            }
        }
        let n = cfg.rho_center.rows();
        let center = ParamPoint::new(cfg.center.clone());
        let mut points = vec![(center.clone(), 0)];
        let mut table = vec![cfg.rho_center.clone()];
        for l in 0..p {
            points.push((center.shifted(l, cfg.h), table.len()));
            table.push(cfg.rho_plus[l].clone());
            points.push((center.shifted(l, -cfg.h), table.len()));
            table.push(cfg.rho_minus[l].clone());
        }
        for (k, rho) in table.iter().enumerate() {
            if rho.shape() != (n, n) {
                return Err(ModelError::InvalidState(format!("stencil entry {k} has shape {:?}, expected {n}x{n}", rho.shape())));
            }
            check_state(rho, STATE_TOL).map_err(|e| ModelError::InvalidState(format!("stencil entry {k}: {e}")))?;
        }
        let domain = ParamBox::new(cfg.center.iter().map(|&c| [c - 2.0 * cfg.h, c + 2.0 * cfg.h]).collect());
        Ok(Self { cfg, domain, points, table })
    }

    pub fn config(&self) -> &StencilConfig {
        &self.cfg
    }

    pub fn center(&self) -> ParamPoint {
        ParamPoint::new(self.cfg.center.clone())
    }

    fn lookup(&self, theta: &[f64]) -> Option<&CMatrix> {
        self.points.iter().find(|(pt, _)| pt.0 == theta).map(|&(_, k)| &self.table[k])
    }
}

impl StateModel for StencilModel {
    fn name(&self) -> &str {
        "stencil"
    }
    fn dim(&self) -> usize {
        self.cfg.rho_center.rows()
    }
    fn n_params(&self) -> usize {
        self.cfg.center.len()
    }
    fn domain(&self) -> &ParamBox {
        &self.domain
    }
    fn contains(&self, theta: &[f64]) -> bool {
        self.lookup(theta).is_some()
    }
    fn eval(&self, theta: &[f64]) -> Result<CMatrix> {
        self.lookup(theta).cloned().ok_or_else(|| ModelError::OutOfDomain { theta: theta.to_vec() })
    }
    fn fixed_step(&self) -> Option<f64> {
        Some(self.cfg.h)
    }
    fn descriptor(&self) -> Value {
        json!({"model": "stencil", "h": self.cfg.h, "center": self.cfg.center, "dim": self.dim()})
    }
}
