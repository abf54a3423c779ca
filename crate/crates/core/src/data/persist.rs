//! Model files: a magic/version line followed by a JSON document.
//!
//! ```text
//! FUSEQ-MODEL v1
//! { "variant": "sf-ms", "metric_names": [...], "params": {...}, ... }
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! restores every parameter bit for bit and re-saving is byte-identical.

use std::path::Path;

use crate::error::{FuseError, Result};
use crate::model::FusionModel;

pub const MODEL_MAGIC: &str = "FUSEQ-MODEL";
pub const MODEL_VERSION: &str = "v1";

pub fn model_to_string(model: &FusionModel) -> Result<String> {
    let body = serde_json::to_string_pretty(model)
        .map_err(|e| FuseError::Parameter(format!("model does not serialize: {e}")))?;
    Ok(format!("{MODEL_MAGIC} {MODEL_VERSION}\n{body}\n"))
}

pub fn model_from_str(text: &str, source: &str) -> Result<FusionModel> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| FuseError::format(source, "missing model header"))?;
    let header = header.trim_end();
    let version = header
        .strip_prefix(MODEL_MAGIC)
        .map(str::trim)
        .ok_or_else(|| FuseError::format(source, format!("not a model file (header `{header}`)")))?;
    if version != MODEL_VERSION {
        return Err(FuseError::Incompatible {
            expected: format!("{MODEL_MAGIC} {MODEL_VERSION}"),
            found: header.to_string(),
        });
    }
    let model: FusionModel =
        serde_json::from_str(body).map_err(|e| FuseError::format(source, e.to_string()))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(model)?).map_err(|e| FuseError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FusionModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
    model_from_str(&text, &path.display().to_string())
}
