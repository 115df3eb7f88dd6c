use std::path::Path;

use serde_json::{Map, Value};

use super::builtin::builtin_registry;
use super::stencil::{StencilConfig, StencilModel};
use super::{ModelError, ParamPoint, Result, StateModel};

/// A model built from a config file, with the working point if one was given.
pub struct LoadedModel {
    pub model: Box<dyn StateModel>,
    pub theta: Option<ParamPoint>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    load_model_str(&text)
}

pub fn load_model_str(text: &str) -> Result<LoadedModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let Value::Object(cfg) = value else {
        return Err(ModelError::Parse("model config must be a JSON object".into()));
    };
    let name = cfg
        .get("model")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::Parse("missing string field `model`".into()))?
        .to_string();

    if name == "stencil" {
        let sc: StencilConfig = serde_json::from_value(Value::Object(cfg)).map_err(|e| ModelError::Parse(e.to_string()))?;
        let m = StencilModel::new(sc)?;
        let theta = Some(m.center());
        return Ok(LoadedModel { model: Box::new(m), theta });
    }

    let registry = builtin_registry();
    let desc = registry.iter().find(|d| d.name == name).ok_or(ModelError::UnknownModel(name))?;
    for key in cfg.keys() {
        if !matches!(key.as_str(), "model" | "theta" | "box") && !desc.constants.contains(&key.as_str()) {
            return Err(ModelError::Parse(format!("unknown field `{key}` for model `{}`", desc.name)));
        }
    }
    let model = (desc.build)(&cfg)?;
    let theta = parse_theta(&cfg, model.n_params())?;
    Ok(LoadedModel { model, theta })
}

fn parse_theta(cfg: &Map<String, Value>, p: usize) -> Result<Option<ParamPoint>> {
    let Some(v) = cfg.get("theta") else { return Ok(None) };
    let theta: Vec<f64> = serde_json::from_value(v.clone()).map_err(|e| ModelError::Parse(format!("`theta`: {e}")))?;
    if theta.len() != p {
        return Err(ModelError::WrongParamCount { expected: p, got: theta.len() });
    }
    Ok(Some(ParamPoint(theta)))
}
