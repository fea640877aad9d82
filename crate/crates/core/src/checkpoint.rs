//! JSON weight checkpoints.
//!
//! ```json
//! {
//!   "format": "mdnet-checkpoint",
//!   "version": 1,
//!   "layer_dims": [n, out_1, ..., out_d],
//!   "epoch": 12,
//!   "weights": [[W_1 row-major], ..., [W_d row-major]]
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::net::Network;

pub const FORMAT_NAME: &str = "mdnet-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    epoch: Option<usize>,
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(network: Network, epoch: Option<usize>) -> Self {
        Self { network, epoch }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            layer_dims: self.network.layer_dims(),
            epoch: self.epoch,
            weights: self.network.weights().iter().map(|w| w.as_slice().to_vec()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME {
            return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        if file.layer_dims.len() != file.weights.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "{} layer dims for {} weight matrices",
                file.layer_dims.len(),
                file.weights.len()
            )));
        }
        let weights = file
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, data)| {
                let (rows, cols) = (file.layer_dims[l + 1], file.layer_dims[l]);
                DenseMatrix::new(rows, cols, data)
                    .map_err(|e| Error::Checkpoint(format!("layer {}: {e}", l + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            network: Network::new(weights)?,
            epoch: file.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
