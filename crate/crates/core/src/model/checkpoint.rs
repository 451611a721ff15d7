//! JSON checkpoint container.
//!
//! Layout (format version 1):
//!
//! ```json
//! {
//!   "format": "hierot-checkpoint",
//!   "version": 1,
//!   "config_hash": "<sha256 hex of the model dims>",
//!   "dims": { "input_dim": 4, "hidden_dim": 16, "channels": 8, "layers": 2, "classes": 5 },
//!   "tensors": [ { "name": "embedder.0.weight", "shape": [16, 4], "data": [...] }, ... ],
//!   "projection_seed": 7
//! }
//! ```
//!
//! Tensor data is row-major. The projection directions, when present, are
//! stored as a tensor named `projections` with shape `[M, C]`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::solvers::ProjectionSet;

pub const CHECKPOINT_FORMAT: &str = "hierot-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub dims: ModelDims,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_seed: Option<u64>,
}

impl Checkpoint {
    pub fn from_model(params: &ModelParams, proj: Option<&ProjectionSet>) -> Self {
        let mut tensors: Vec<NamedTensor> = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        if let Some(p) = proj {
            tensors.push(NamedTensor {
                name: "projections".into(),
                shape: p.directions().shape().to_vec(),
                data: p.directions().iter().copied().collect(),
            });
        }
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: params.dims.config_hash(),
            dims: params.dims,
            tensors,
            projection_seed: proj.map(ProjectionSet::seed),
        }
    }

    /// Rebuilds the model, checking the stored hash and every tensor shape.
    pub fn to_model(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.config_hash != self.dims.config_hash() {
            return Err(Error::ShapeMismatch(
                "checkpoint config hash does not match its dims".into(),
            ));
        }
        let mut params = ModelParams::zeros(self.dims)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        for ((name, shape), (_, dst)) in expected.into_iter().zip(params.tensors_mut()) {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != dst.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn projections(&self) -> Result<Option<ProjectionSet>> {
        let Some(t) = self.tensors.iter().find(|t| t.name == "projections") else {
            return Ok(None);
        };
        if t.shape.len() != 2 || t.shape[1] != self.dims.channels {
            return Err(Error::ShapeMismatch(format!(
                "projection tensor shape {:?} does not match C = {}",
                t.shape, self.dims.channels
            )));
        }
        let dirs = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        ProjectionSet::from_directions(dirs, self.projection_seed.unwrap_or(0)).map(Some)
    }

    /// Fails unless the checkpoint was written for `dims`.
    pub fn check_compatible(&self, dims: &ModelDims) -> Result<()> {
        if self.config_hash != dims.config_hash() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint was trained for {:?}, requested {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
