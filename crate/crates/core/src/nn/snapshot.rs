//! Model snapshot file format: a versioned JSON document with layer dims,
//! activation tag and row-major parameter arrays. `f64` values survive the
//! round trip bit-exactly (shortest-representation float printing).

use crate::error::{Error, Result};
use crate::nn::{Activation, Model};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    /// Per-layer weight matrices flattened row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let snap = Snapshot {
        version: SNAPSHOT_VERSION,
        layer_dims: model.layer_dims().to_vec(),
        activation: model.activation(),
        weights: model
            .weights()
            .iter()
            .map(|w| w.iter().copied().collect())
            .collect(),
        biases: model
            .biases()
            .iter()
            .map(|b| b.to_vec())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&snap)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    let snap: Snapshot = serde_json::from_str(&text)?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(Error::argument(format!(
            "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
            snap.version
        )));
    }
    let dims = snap.layer_dims;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let flat = snap
            .weights
            .get(l)
            .ok_or_else(|| Error::argument(format!("missing weight layer {l}")))?;
        let w = Array2::from_shape_vec((fan_in, fan_out), flat.clone())
            .map_err(|e| Error::argument(format!("weight layer {l}: {e}")))?;
        let b = snap
            .biases
            .get(l)
            .ok_or_else(|| Error::argument(format!("missing bias layer {l}")))?;
        weights.push(w);
        biases.push(Array1::from_vec(b.clone()));
    }
    Model::from_parts(dims, weights, biases, snap.activation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::seeded(&[7, 16, 5], Activation::Tanh, 12345).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&m, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert!(m.params_bitwise_eq(&loaded));
        assert_eq!(m.activation(), loaded.activation());
    }

    #[test]
    fn version_field_is_enforced() {
        let m = Model::zeros(&[2, 2], Activation::Relu).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn missing_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(
            &path,
            r#"{"layer_dims":[2,2],"activation":"relu","weights":[[0,0,0,0]],"biases":[[0,0]]}"#,
        )
        .unwrap();
        assert!(load_model(&path).is_err());
    }
}
