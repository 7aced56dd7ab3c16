//! Model persistence.
//!
//! A checkpoint is a JSON document: a header with the format version and the
//! dimensions the model was built for, followed by named parameter arrays.
//! Values are written as decimal strings with 17 significant digits, which
//! round-trips every `f64` bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{skeleton_model, GnnModel, ModelDims};

const FORMAT: &str = "cfmimo-gnn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    bs_count: usize,
    antennas_per_bs: usize,
    irs_elements: usize,
    layer_count: usize,
    hidden_widths: Vec<usize>,
    controlling_bs: usize,
    feature_scale: f64,
    params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &GnnModel, path: &Path) -> Result<()> {
    let params = model
        .named_params()
        .iter()
        .map(|(name, tensor)| ParamEntry {
            name: name.clone(),
            rows: tensor.rows(),
            cols: tensor.cols(),
            values: tensor.data().iter().map(|x| format!("{x:.16e}")).collect(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        bs_count: model.dims.bs_count,
        antennas_per_bs: model.dims.antennas_per_bs,
        irs_elements: model.dims.irs_elements,
        layer_count: model.dims.layer_count,
        hidden_widths: model.dims.hidden_widths.clone(),
        controlling_bs: model.dims.controlling_bs,
        feature_scale: model.dims.feature_scale,
        params,
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;

    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "field 'format': expected {FORMAT:?}, found {:?}",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "field 'version': expected {VERSION}, found {}",
            file.version
        )));
    }
    if file.hidden_widths.is_empty() || file.layer_count == 0 {
        return Err(Error::Checkpoint(
            "field 'hidden_widths'/'layer_count': must be nonempty and positive".into(),
        ));
    }

    if !(file.feature_scale > 0.0 && file.feature_scale.is_finite()) {
        return Err(Error::Checkpoint(
            "field 'feature_scale': must be finite and > 0".into(),
        ));
    }
    let dims = ModelDims {
        bs_count: file.bs_count,
        antennas_per_bs: file.antennas_per_bs,
        irs_elements: file.irs_elements,
        layer_count: file.layer_count,
        hidden_widths: file.hidden_widths.clone(),
        controlling_bs: file.controlling_bs,
        feature_scale: file.feature_scale,
    };
    let mut model = skeleton_model(&dims);

    // The header determines the full parameter inventory; the stored arrays
    // must match it name by name and shape by shape.
    let expected: Vec<(String, (usize, usize))> = model
        .named_params()
        .iter()
        .map(|(name, t)| (name.clone(), (t.rows(), t.cols())))
        .collect();
    if file.params.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "field 'params': expected {} arrays for these dimensions, found {}",
            expected.len(),
            file.params.len()
        )));
    }
    for (entry, (name, (rows, cols))) in file.params.iter().zip(&expected) {
        if &entry.name != name {
            return Err(Error::Checkpoint(format!(
                "field 'params': expected array {name:?}, found {:?}",
                entry.name
            )));
        }
        if entry.rows != *rows || entry.cols != *cols {
            return Err(Error::Checkpoint(format!(
                "field 'params.{name}': expected shape {rows}x{cols}, found {}x{}",
                entry.rows, entry.cols
            )));
        }
        if entry.values.len() != rows * cols {
            return Err(Error::Checkpoint(format!(
                "field 'params.{name}': expected {} values, found {}",
                rows * cols,
                entry.values.len()
            )));
        }
    }

    for (target, entry) in model.params_mut().into_iter().zip(&file.params) {
        for (slot, text) in target.data_mut().iter_mut().zip(&entry.values) {
            *slot = text.parse::<f64>().map_err(|e| {
                Error::Checkpoint(format!("field 'params.{}': bad value {text:?}: {e}", entry.name))
            })?;
        }
        if !target.all_finite() {
            return Err(Error::Checkpoint(format!(
                "field 'params.{}': non-finite value",
                entry.name
            )));
        }
    }
    Ok(model)
}
