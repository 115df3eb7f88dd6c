//! State → decomposition → SLDs → QFIM at one parameter point.

use thiserror::Error;

use crate::blocks::{decompose, BlockDecomposition, BlocksError, RankOptions};
use crate::model::{eval_bundle, DerivativeMode, ModelError, ParamPoint, StateBundle, StateModel};
use crate::sld::{compute_slds, qfim, Qfim, SldError, SldOptions, SldSet};
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Blocks(#[from] BlocksError),
    #[error(transparent)]
    Sld(#[from] SldError),
}

impl Tolerances {
    pub fn rank_options(&self) -> RankOptions {
        RankOptions { tau_rank: self.rank, gamma_min: self.gamma_min }
    }

    pub fn sld_options(&self) -> SldOptions {
        SldOptions { tau_sld: self.sld, tau_nullblock: self.nullblock, lzz: None }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub theta: ParamPoint,
    /// Finite-difference step actually used.
    pub h: f64,
    pub bundle: StateBundle,
    pub dec: BlockDecomposition,
    pub slds: SldSet,
    pub qfim: Qfim,
}

pub fn analyze_point(
    model: &dyn StateModel,
    theta: &ParamPoint,
    tols: &Tolerances,
    mode: DerivativeMode,
) -> Result<Analysis, PipelineError> {
    let h = model.fixed_step().unwrap_or(tols.h);
    let bundle = eval_bundle(model, theta, h, mode)?;
    let dec = decompose(&bundle.rho, tols.rank_options())?;
    let slds = compute_slds(&bundle, &dec, &tols.sld_options())?;
    let qfim = qfim(&slds)?;
    Ok(Analysis { theta: theta.clone(), h, bundle, dec, slds, qfim })
}
