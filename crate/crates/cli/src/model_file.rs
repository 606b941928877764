//! Model files: the core model plus the column schema it was fitted with.

use std::path::Path;

use dvqr_core::dvine::DVineRegModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::schema::ColumnSchema;

pub const FILE_FORMAT: &str = "dvqr-model-file";
pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// Names of the model columns; index `i` is model column `i`.
    pub columns: Vec<String>,
    pub schema: ColumnSchema,
    pub dropped_rows: usize,
    pub model: serde_json::Value,
}

impl ModelFile {
    pub fn new(columns: Vec<String>, schema: ColumnSchema, dropped_rows: usize, model: &DVineRegModel) -> CliResult<Self> {
        let model = serde_json::from_str(&model.to_json()?).map_err(|e| CliError::Data(e.to_string()))?;
        Ok(ModelFile {
            format: FILE_FORMAT.into(),
            version: FILE_VERSION,
            columns,
            schema,
            dropped_rows,
            model,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("model file serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<(Self, DVineRegModel)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if file.format != FILE_FORMAT {
            return Err(CliError::Data(format!("{}: not a model file", path.display())));
        }
        if file.version != FILE_VERSION {
            return Err(CliError::Data(format!(
                "{}: unsupported model file version {}",
                path.display(),
                file.version
            )));
        }
        let model = DVineRegModel::from_json(&file.model.to_string())?;
        Ok((file, model))
    }
}
