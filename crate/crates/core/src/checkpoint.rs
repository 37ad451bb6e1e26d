//! JSON checkpoints holding the model spec, every parameter tensor and the
//! batch-norm running statistics.
//!
//! Values are stored as `f64`, which holds `f32` exactly, and written with
//! round-trip float formatting, so save/load is bit-exact in either
//! precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelSpec};
use crate::scalar::Real;
use crate::tensor::{BatchNormState, Tensor};

pub const FORMAT: &str = "graphcnn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredBatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub precision: String,
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub params: Vec<StoredTensor>,
    pub batch_norm: Vec<StoredBatchNorm>,
}

fn widen<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn narrow<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::from_f64_lossy(*x)).collect()
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>) -> Self {
        Self {
            format: FORMAT.to_string(),
            precision: T::NAME.to_string(),
            spec: model.spec().clone(),
            input_dim: model.input_dim(),
            params: model
                .params()
                .iter()
                .map(|(_, name, t)| StoredTensor {
                    name: name.to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: widen(t.data()),
                })
                .collect(),
            batch_norm: model
                .bn_states()
                .iter()
                .map(|s| StoredBatchNorm {
                    mean: widen(&s.mean),
                    var: widen(&s.var),
                    momentum: s.momentum.to_f64_lossy(),
                    eps: s.eps.to_f64_lossy(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model and overwrites its state with the stored values.
    pub fn into_model<T: Real>(&self) -> Result<Model<T>> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}",
                self.format
            )));
        }
        if self.precision != T::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} values, requested {}",
                self.precision,
                T::NAME
            )));
        }
        let mut model = build_model::<T>(&self.spec, self.input_dim)?;
        let ids: Vec<_> = model.params().ids().collect();
        if ids.len() != self.params.len() || model.bn_states().len() != self.batch_norm.len() {
            return Err(Error::Checkpoint(
                "tensor count does not match the architecture".into(),
            ));
        }
        for (id, stored) in ids.into_iter().zip(&self.params) {
            if model.params().name(id) != stored.name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {}, found {}",
                    model.params().name(id),
                    stored.name
                )));
            }
            let t = Tensor::new(stored.rows, stored.cols, narrow(&stored.data))
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", stored.name)))?;
            model
                .params_mut()
                .set(id, t)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", stored.name)))?;
        }
        for (state, stored) in model.bn_states_mut().iter_mut().zip(&self.batch_norm) {
            if stored.mean.len() != state.channels() || stored.var.len() != state.channels() {
                return Err(Error::Checkpoint("batch-norm width mismatch".into()));
            }
            *state = BatchNormState {
                mean: narrow(&stored.mean),
                var: narrow(&stored.var),
                momentum: T::from_f64_lossy(stored.momentum),
                eps: T::from_f64_lossy(stored.eps),
            };
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Writes next to `path` first and renames into place.
pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    let json = Checkpoint::from_model(model).to_json()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&s)?.into_model()
}
