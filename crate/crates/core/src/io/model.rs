//! Network persistence as JSON. Floats are written in shortest round-trip
//! form, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::nn::{Activation, Layer, MlpNetwork, NnError};

use super::IoError;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    in_dim: usize,
    out_dim: usize,
    activation: String,
    /// Row-major `out_dim × in_dim`.
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    classes: usize,
    layers: Vec<LayerDoc>,
}

pub fn model_to_json(net: &MlpNetwork) -> String {
    let doc = ModelDoc {
        version: MODEL_VERSION,
        classes: net.classes(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerDoc {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation.as_str().to_string(),
                weights: l.weight.data().to_vec(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<MlpNetwork, IoError> {
    // Check the version before the full schema so that a future format is
    // reported as such rather than as malformed.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IoError::MalformedModel(e.to_string()))?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(v) => {
            return Err(IoError::VersionMismatch {
                found: v,
                expected: MODEL_VERSION,
            })
        }
        None => return Err(IoError::MalformedModel("missing numeric `version`".into())),
    }
    let doc: ModelDoc =
        serde_json::from_value(raw).map_err(|e| IoError::MalformedModel(e.to_string()))?;
    let dim_err = |layer: usize, detail: String| IoError::ModelDimension { layer, detail };
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        let act = Activation::parse(&l.activation).ok_or_else(|| {
            IoError::MalformedModel(format!("layer {i}: activation `{}`", l.activation))
        })?;
        if l.weights.len() != l.in_dim * l.out_dim {
            return Err(dim_err(
                i,
                format!(
                    "{} weights for a {}x{} matrix",
                    l.weights.len(),
                    l.out_dim,
                    l.in_dim
                ),
            ));
        }
        let weight = Matrix::new(l.out_dim, l.in_dim, l.weights)
            .map_err(|e| IoError::MalformedModel(format!("layer {i}: {e}")))?;
        layers.push(Layer::new(weight, l.bias, act));
    }
    let net = MlpNetwork::new(layers).map_err(|e| match e {
        NnError::Dimension { layer, detail } => dim_err(layer, detail),
        other => IoError::MalformedModel(other.to_string()),
    })?;
    if net.classes() != doc.classes {
        return Err(dim_err(
            net.depth() - 1,
            format!(
                "{} outputs but {} classes declared",
                net.classes(),
                doc.classes
            ),
        ));
    }
    Ok(net)
}

pub fn save_model(net: &MlpNetwork, path: &Path) -> Result<(), IoError> {
    fs::write(path, model_to_json(net)).map_err(|e| IoError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpNetwork, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = MlpNetwork::init_with_bias(&[4, 7, 5, 3], 12, true).unwrap();
        let back = model_from_json(&model_to_json(&net)).unwrap();
        assert_eq!(back, net);
        for (a, b) in net.layers().iter().zip(back.layers()) {
            let x: Vec<u64> = a.weight.data().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u64> = b.weight.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn distinct_errors() {
        let net = MlpNetwork::init(&[2, 3, 2], 1).unwrap();
        let text = model_to_json(&net);
        assert!(matches!(
            model_from_json(&text[..text.len() / 2]),
            Err(IoError::MalformedModel(_))
        ));
        let v2 = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            model_from_json(&v2),
            Err(IoError::VersionMismatch { found: 2, .. })
        ));
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["layers"][1]["in_dim"] = 2.into();
        doc["layers"][1]["out_dim"] = 3.into();
        assert!(matches!(
            model_from_json(&doc.to_string()),
            Err(IoError::ModelDimension { layer: 1, .. })
        ));
    }
}
