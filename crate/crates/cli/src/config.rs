//! Loading experiment configurations from JSON.

use std::fs;
use std::path::Path;

use haes::harness::{preset, ExperimentConfig, Preset};
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

/// A preset with an optional merge patch.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    preset: Preset,
    #[serde(default)]
    overrides: Value,
}

/// Reads either `{"preset": ..., "overrides": ...}` or a complete
/// experiment; every invariant is checked before returning.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let cfg = if doc.get("preset").is_some() {
        let file: PresetFile = serde_json::from_value(doc).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let base = preset(file.preset);
        if file.overrides.is_null() {
            base
        } else {
            base.with_overrides(&file.overrides)?
        }
    } else {
        serde_json::from_value(doc).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
    };
    cfg.resolve()?;
    Ok(cfg)
}

/// Applies the command-line overrides shared by every subcommand.
pub fn apply_flags(cfg: &mut ExperimentConfig, stride: Option<usize>, seed: Option<u64>) {
    if let Some(s) = stride {
        cfg.solve.record_stride = s;
    }
    if let Some(s) = seed {
        cfg.solve.seed = s;
    }
}
