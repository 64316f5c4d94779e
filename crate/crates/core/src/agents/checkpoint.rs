use std::fs;
use std::path::Path;

use super::AgentModel;
use crate::error::{Error, Result};

/// Writes the model as pretty JSON. Floats use the shortest representation
/// that parses back to the same bits.
pub fn save_checkpoint(model: &AgentModel, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(model)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AgentModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: AgentModel = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}
