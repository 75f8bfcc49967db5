//! Weight files: JSON with a format version, the head kind, and each
//! layer's shape plus row-major weights and biases. Floats are written in
//! shortest round-trip form, so save → load is exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{HeadKind, Layer, MlpModel};
use super::ModelError;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    head_kind: HeadKind,
    layers: Vec<LayerFile>,
}

pub fn model_to_string(model: &MlpModel) -> String {
    let file = ModelFile {
        format_version: WEIGHT_FORMAT_VERSION,
        head_kind: model.head_kind(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerFile {
                shape: [l.outputs(), l.inputs()],
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn model_from_str(text: &str) -> Result<MlpModel, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
    if file.format_version != WEIGHT_FORMAT_VERSION {
        return Err(ModelError::Version {
            found: file.format_version,
            expected: WEIGHT_FORMAT_VERSION,
        });
    }
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let weights = Array2::from_shape_vec((l.shape[0], l.shape[1]), l.weights)
                .map_err(|e| ModelError::Chain(format!("layer {i}: {e}")))?;
            Ok(Layer::new(weights, Array1::from(l.bias)))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    MlpModel::from_layers(file.head_kind, layers)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path.as_ref(), model_to_string(model)).map_err(|e| ModelError::Io(path.as_ref().display().to_string(), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
    model_from_str(&text)
}
