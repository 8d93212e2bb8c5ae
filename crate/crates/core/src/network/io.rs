//! Model documents and dataset CSV files.
//!
//! A model is a JSON object with the spec fields plus `weights`: the flat
//! parameter vector as base64 of little-endian `f64`, so it round-trips
//! bit-exactly. Dataset rows are `feature,…,feature,label`.

use std::io::Write;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Activation, Dataset, Loss, MlpSpec, NetworkParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const FORMAT: &str = "renyi-sharpness/mlp";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub layer_shapes: Vec<(usize, usize)>,
    pub activation: Activation,
    pub loss: Loss,
    pub bias: bool,
    pub weights: String,
}

pub fn save_model(spec: &MlpSpec, params: &NetworkParams) -> Result<String> {
    params.check_spec(spec)?;
    let bytes: Vec<u8> = params.flat().iter().flat_map(|w| w.to_le_bytes()).collect();
    let doc = ModelDocument {
        format: FORMAT.into(),
        layer_shapes: spec.layer_shapes.clone(),
        activation: spec.activation,
        loss: spec.loss,
        bias: spec.bias,
        weights: STANDARD.encode(bytes),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn load_model(text: &str) -> Result<(MlpSpec, NetworkParams)> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(Error::validation(format!(
            "unknown model format {:?}",
            doc.format
        )));
    }
    let spec = MlpSpec {
        layer_shapes: doc.layer_shapes,
        activation: doc.activation,
        loss: doc.loss,
        bias: doc.bias,
    };
    let bytes = STANDARD
        .decode(doc.weights.as_bytes())
        .map_err(|e| Error::validation(format!("weights are not valid base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::validation(
            "weight payload is not a whole number of f64",
        ));
    }
    let flat = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = NetworkParams::new(&spec, flat)?;
    Ok((spec, params))
}

/// Parses `features…,label` rows. `classes` defaults to `max label + 1`.
pub fn parse_dataset_csv(text: &str, classes: Option<usize>) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::validation(format!(
                "line {}: need features and a label",
                lineno + 1
            )));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::shape(format!(
                    "line {}: {} fields, expected {w}",
                    lineno + 1,
                    fields.len()
                )))
            }
            _ => {}
        }
        for f in &fields[..fields.len() - 1] {
            features.push(f.parse::<f64>().map_err(|_| {
                Error::validation(format!("line {}: cannot parse {f:?} as a real", lineno + 1))
            })?);
        }
        let label = fields[fields.len() - 1];
        labels.push(label.parse::<usize>().map_err(|_| {
            Error::validation(format!(
                "line {}: label {label:?} is not a class index",
                lineno + 1
            ))
        })?);
    }
    let Some(w) = width else {
        return Err(Error::validation("dataset file has no rows"));
    };
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let inputs = Matrix::from_vec(labels.len(), w - 1, features)?;
    Dataset::classification(inputs, labels, classes)
}

pub fn write_dataset_csv(data: &Dataset, mut w: impl Write) -> Result<()> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::validation("only labelled datasets can be written as CSV"))?;
    for (r, label) in labels.iter().enumerate() {
        let row: Vec<String> = data
            .inputs
            .row(r)
            .iter()
            .map(|x| format!("{x:?}"))
            .collect();
        writeln!(w, "{},{label}", row.join(","))?;
    }
    Ok(())
}
