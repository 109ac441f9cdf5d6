//! JSON checkpoints.
//!
//! A checkpoint is a single JSON document whose top-level fields appear in
//! this fixed order:
//!
//! ```text
//! { "format": "regunet-ckpt-1", "model": {..}, "rng_seed": u64,
//!   "layers": [ { "name", "kind", "shape", "weight"?, "bias"?,
//!                 "running_mean"?, "running_var"? }, .. ],
//!   "data": { "feature_names", "label_column", "val_fraction",
//!             "split_seed", "standardization": { "mean", "std" } } | null }
//! ```
//!
//! Arrays are row-major decimal floats written with shortest round-trip
//! formatting, so a load reproduces every parameter bit for bit. The layer
//! list mirrors [`Model::layers`]; parameter-free layers carry only
//! name, kind and `[input_width, output_width]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{LayerKind, Model, ModelConfig};
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: &str = "regunet-ckpt-1";

/// Preprocessing and split provenance stored with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub feature_names: Vec<String>,
    pub label_column: String,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub standardization: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format: String,
    pub model: ModelConfig,
    pub rng_seed: u64,
    pub layers: Vec<LayerRecord>,
    pub data: Option<DataRecord>,
}

/// A loaded checkpoint. The model comes back in eval mode.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub data: Option<DataRecord>,
}

fn shape_of(model: &Model, name: &str, kind: LayerKind, widths: (usize, usize)) -> [usize; 2] {
    match kind {
        LayerKind::Dense => {
            let d = model
                .dense_by_name(name)
                .expect("listed dense layer exists");
            [d.fan_in(), d.fan_out()]
        }
        LayerKind::Batchnorm => [1, widths.1],
        _ => [widths.0, widths.1],
    }
}

pub fn to_document(model: &Model, data: Option<&DataRecord>) -> CheckpointDoc {
    let layers = model
        .layers()
        .into_iter()
        .map(|info| {
            let shape = shape_of(
                model,
                &info.name,
                info.kind,
                (info.input_width, info.output_width),
            );
            let mut rec = LayerRecord {
                name: info.name.clone(),
                kind: info.kind,
                shape,
                weight: None,
                bias: None,
                running_mean: None,
                running_var: None,
            };
            match info.kind {
                LayerKind::Dense => {
                    let d = model
                        .dense_by_name(&info.name)
                        .expect("listed dense layer exists");
                    rec.weight = Some(d.weight().data().to_vec());
                    rec.bias = Some(d.bias().data().to_vec());
                }
                LayerKind::Batchnorm => {
                    let bn = model
                        .batch_norm_by_name(&info.name)
                        .expect("listed batch norm exists");
                    rec.running_mean = Some(bn.running_mean().data().to_vec());
                    rec.running_var = Some(bn.running_var().data().to_vec());
                }
                _ => {}
            }
            rec
        })
        .collect();
    CheckpointDoc {
        format: CHECKPOINT_FORMAT.to_string(),
        model: model.config().clone(),
        rng_seed: model.config().seed,
        layers,
        data: data.cloned(),
    }
}

fn take_array(
    rec: &LayerRecord,
    field: &'static str,
    value: &Option<Vec<f64>>,
    len: usize,
) -> Result<Vec<f64>> {
    let v = value
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("layer `{}` is missing `{field}`", rec.name)))?;
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "shape inconsistency in layer `{}`: `{field}` has {} values, shape requires {len}",
            rec.name,
            v.len()
        )));
    }
    Ok(v.clone())
}

/// Rebuilds a model from a parsed document, validating its structure.
pub fn from_document(doc: CheckpointDoc) -> Result<Checkpoint> {
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format `{}` (expected `{CHECKPOINT_FORMAT}`)",
            doc.format
        )));
    }
    let mut model = Model::build(doc.model.clone())
        .map_err(|e| Error::Checkpoint(format!("invalid model configuration: {e}")))?;
    let expected = to_document(&model, None).layers;
    if expected.len() != doc.layers.len() {
        return Err(Error::Checkpoint(format!(
            "shape inconsistency: the model configuration implies {} layers, checkpoint lists {}",
            expected.len(),
            doc.layers.len()
        )));
    }
    for (want, rec) in expected.iter().zip(&doc.layers) {
        if want.name != rec.name || want.kind != rec.kind || want.shape != rec.shape {
            return Err(Error::Checkpoint(format!(
                "shape inconsistency at layer `{}`: expected {:?} {:?} `{}`, found {:?} {:?}",
                rec.name, want.kind, want.shape, want.name, rec.kind, rec.shape
            )));
        }
        let [rows, cols] = rec.shape;
        match rec.kind {
            LayerKind::Dense => {
                let weight = Matrix::new(
                    rows,
                    cols,
                    take_array(rec, "weight", &rec.weight, rows * cols)?,
                )
                .map_err(|e| Error::Checkpoint(format!("layer `{}`: {e}", rec.name)))?;
                let bias = Matrix::new(1, cols, take_array(rec, "bias", &rec.bias, cols)?)
                    .map_err(|e| Error::Checkpoint(format!("layer `{}`: {e}", rec.name)))?;
                let d = model
                    .dense_by_name_mut(&rec.name)
                    .expect("validated against the configuration");
                *d.weight_mut() = weight;
                *d.bias_mut() = bias;
            }
            LayerKind::Batchnorm => {
                let mean = Matrix::new(
                    1,
                    cols,
                    take_array(rec, "running_mean", &rec.running_mean, cols)?,
                )
                .map_err(|e| Error::Checkpoint(format!("layer `{}`: {e}", rec.name)))?;
                let var = Matrix::new(
                    1,
                    cols,
                    take_array(rec, "running_var", &rec.running_var, cols)?,
                )
                .map_err(|e| Error::Checkpoint(format!("layer `{}`: {e}", rec.name)))?;
                model
                    .batch_norm_by_name_mut(&rec.name)
                    .expect("validated against the configuration")
                    .set_running_stats(mean, var)
                    .map_err(|e| Error::Checkpoint(format!("layer `{}`: {e}", rec.name)))?;
            }
            _ => {}
        }
    }
    if let Some(data) = &doc.data {
        let st = &data.standardization;
        let n = doc.model.input_dim;
        if data.feature_names.len() != n || st.mean.len() != n || st.std.len() != n {
            return Err(Error::Checkpoint(format!(
                "shape inconsistency: data record does not describe {n} features"
            )));
        }
    }
    model.set_mode(Mode::Eval);
    Ok(Checkpoint {
        model,
        data: doc.data,
    })
}

pub fn save_checkpoint(model: &Model, data: Option<&DataRecord>, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(&to_document(model, data))?;
    crate::write_atomic(path, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let doc: CheckpointDoc = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
    from_document(doc)
}
