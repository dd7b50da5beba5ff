//! Versioned text persistence for toy classifiers.
//!
//! The file is JSON with explicit field names, per-layer shapes and
//! row-major weights, followed by an 8-hex-digit checksum of the body.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Activation, ClassifierKind, Dense, ProblemError, ToyClassifier};
use crate::numerics::Point;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT_NAME: &str = "mdcs-toy-classifier";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    name: String,
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    format: String,
    version: u32,
    kind: ClassifierKind,
    activation: Activation,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    body: ModelBody,
    checksum: String,
}

fn checksum(body: &ModelBody) -> Result<String, ProblemError> {
    let canonical =
        serde_json::to_string(body).map_err(|e| ProblemError::Corrupt(e.to_string()))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest[..4].iter().map(|b| format!("{b:02x}")).collect())
}

pub fn model_to_text(model: &ToyClassifier) -> Result<String, ProblemError> {
    let body = ModelBody {
        format: MODEL_FORMAT_NAME.to_string(),
        version: MODEL_FORMAT_VERSION,
        kind: model.kind,
        activation: model.activation,
        layers: model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerRecord {
                name: format!("layer{i}"),
                shape: [l.outputs(), l.inputs()],
                weights: l.weights.as_slice().to_vec(),
                bias: l.bias.as_slice().to_vec(),
            })
            .collect(),
    };
    let file = ModelFile {
        checksum: checksum(&body)?,
        body,
    };
    serde_json::to_string_pretty(&file).map_err(|e| ProblemError::Corrupt(e.to_string()))
}

pub fn model_from_text(text: &str) -> Result<ToyClassifier, ProblemError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| ProblemError::Corrupt(e.to_string()))?;
    let body = file.body;
    if body.format != MODEL_FORMAT_NAME {
        return Err(ProblemError::Corrupt(format!("unknown format '{}'", body.format)));
    }
    if body.version != MODEL_FORMAT_VERSION {
        return Err(ProblemError::Corrupt(format!(
            "unsupported version {}",
            body.version
        )));
    }
    let expected = checksum(&body)?;
    if expected != file.checksum {
        return Err(ProblemError::Corrupt(format!(
            "checksum mismatch: stored {}, computed {expected}",
            file.checksum
        )));
    }
    let want_layers = match body.kind {
        ClassifierKind::Logistic => 1,
        ClassifierKind::Mlp => 2,
    };
    if body.layers.len() != want_layers {
        return Err(ProblemError::Corrupt(format!(
            "{:?} needs {want_layers} layers, found {}",
            body.kind,
            body.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(body.layers.len());
    for rec in body.layers {
        let [outputs, inputs] = rec.shape;
        let weights = Point::with_shape(rec.weights, vec![outputs, inputs])
            .map_err(|e| ProblemError::Corrupt(format!("{}: {e}", rec.name)))?;
        let bias = Point::with_shape(rec.bias, vec![outputs])
            .map_err(|e| ProblemError::Corrupt(format!("{}: {e}", rec.name)))?;
        layers.push(Dense { weights, bias });
    }
    for pair in layers.windows(2) {
        if pair[0].outputs() != pair[1].inputs() {
            return Err(ProblemError::Corrupt("layer shapes do not chain".into()));
        }
    }
    Ok(ToyClassifier {
        kind: body.kind,
        activation: body.activation,
        layers,
    })
}

pub fn save_model(model: &ToyClassifier, path: &Path) -> Result<(), ProblemError> {
    let text = model_to_text(model)?;
    std::fs::write(path, text + "\n").map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ToyClassifier, ProblemError> {
    if !path.exists() {
        return Err(ProblemError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::problems::{make_blobs, train_classifier, TrainHyper};

    fn trained() -> ToyClassifier {
        let data = make_blobs(&mut SeededRng::new(9, 0), 10, 3, 4, 8.0).unwrap();
        let hyper = TrainHyper {
            hidden: 6,
            epochs: 3,
            ..TrainHyper::default()
        };
        train_classifier(ClassifierKind::Mlp, &data, &hyper).unwrap().0
    }

    #[test]
    fn text_round_trip_is_exact() {
        let model = trained();
        let text = model_to_text(&model).unwrap();
        assert_eq!(model_from_text(&text).unwrap(), model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }

    #[test]
    fn checksum_is_eight_hex_digits() {
        let text = model_to_text(&trained()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let sum = v["checksum"].as_str().unwrap();
        assert_eq!(sum.len(), 8);
        assert!(sum.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn tampering_is_detected() {
        let text = model_to_text(&trained()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["body"]["layers"][0]["bias"][0] = serde_json::json!(123.0);
        let err = model_from_text(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
}
