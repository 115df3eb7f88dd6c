//! JSON report emitted by every subcommand.

use serde::Serialize;
use serde_json::Value;

use crate::blocks::DecompositionSummary;
use crate::conditions::ConditionReport;
use crate::estimate::{ConvergenceStudy, SimResult};
use crate::linalg::CMatrix;
use crate::model::{DerivativeSource, ParamPoint};
use crate::povm::{OptimalityReport, SaturationReport};
use crate::sld::Qfim;
use crate::tolerances::Tolerances;

pub const SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PovmSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub projective: bool,
    pub effects: Vec<CMatrix>,
    pub optimality: OptimalityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySection {
    #[serde(flatten)]
    pub study: ConvergenceStudy,
    pub decreasing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: ToolInfo,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<ParamPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derivative_source: Option<DerivativeSource>,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qfim: Option<Qfim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub povm: Option<PovmSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<SaturationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    pub warnings: Vec<String>,
    pub verdict: String,
    pub exit_code: i32,
    pub exit_codes: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl Report {
    pub fn new(command: &'static str, tolerances: Tolerances) -> Self {
        Self {
            tool: ToolInfo::default(),
            command,
            model: None,
            theta: None,
            h: None,
            derivative_source: None,
            tolerances,
            decomposition: None,
            qfim: None,
            conditions: None,
            povm: None,
            saturation: None,
            simulation: None,
            study: None,
            warnings: Vec::new(),
            verdict: String::new(),
            exit_code: 0,
            exit_codes: exit_code_table(),
            error: None,
        }
    }

    pub fn finish(&mut self, verdict: impl Into<String>, exit_code: i32) {
        self.verdict = verdict.into();
        self.exit_code = exit_code;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn exit_code_table() -> Value {
    serde_json::json!({
        "0": "saturable_projective (analyze), pass (construct, verify, simulate)",
        "1": "error: unreadable or invalid input, numerical failure",
        "2": "necessary_failed (analyze), condition_failed (construct), fail (verify, simulate), singular_fisher (simulate)",
        "3": "undetermined (analyze)"
    })
}
