//! JSON model files. Dimensions are stored explicitly in `model.config` and
//! checked against every weight block on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use start_core::harness::Model;

use crate::error::{CliError, Result};

pub const MODEL_FORMAT: &str = "start-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub variant: String,
    pub seed: u64,
    /// Domain excluded from training, if the model came from a LODO run.
    pub held_out_domain: Option<usize>,
    pub model: Model,
}

impl ModelFile {
    pub fn new(model: Model, variant: &str, seed: u64, held_out_domain: Option<usize>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            variant: variant.into(),
            seed,
            held_out_domain,
            model,
        }
    }
}

pub fn save(path: &Path, file: &ModelFile) -> Result<()> {
    let text = serde_json::to_string(file).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    if file.format != MODEL_FORMAT {
        return Err(CliError::Usage(format!(
            "{}: unsupported model format `{}`",
            path.display(),
            file.format
        )));
    }
    file.model.validate()?;
    Ok(file)
}
