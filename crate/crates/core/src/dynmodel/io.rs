//! Model files.
//!
//! A model is stored as JSON:
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "checksum": "<sha256 hex of the compact JSON encoding of payload>",
//!   "payload": {
//!     "stage": "initialized" | "autoencoder" | "single_step" | "multi_step",
//!     "architecture": { "block_len", "hidden", "latent_per_step", "rnn_units" },
//!     "layers": [ { "name", "kind", "n_in", "n_out", "offset" } ... ],
//!     "theta": [ f64 ... ],
//!     "norm_stats": { "mean", "std", "degenerate", "computed_over" }
//!   }
//! }
//! ```
//!
//! `theta` is the flat parameter vector; each dense layer stores its weight
//! matrix row-major (`n_out x n_in`) followed by its bias, each recurrent
//! layer its input weights, recurrent weights (`units x units`) and bias.
//! Floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Architecture, Layout, NetworkParams, Stage};
use crate::dataset::NormStats;
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    kind: String,
    n_in: usize,
    n_out: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    stage: Stage,
    architecture: Architecture,
    layers: Vec<LayerEntry>,
    theta: Vec<f64>,
    norm_stats: NormStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    checksum: String,
    payload: Payload,
}

fn layers(layout: &Layout) -> Vec<LayerEntry> {
    let mut out: Vec<LayerEntry> = layout
        .dense_layers()
        .iter()
        .map(|(name, s)| LayerEntry { name: name.to_string(), kind: "dense_tanh".into(), n_in: s.n_in, n_out: s.n_out, offset: s.offset })
        .collect();
    out.last_mut().expect("six dense layers").kind = "dense_linear".into();
    out.extend(layout.recurrent_layers().iter().map(|(name, r)| LayerEntry {
        name: name.to_string(),
        kind: "elman_tanh".into(),
        n_in: r.n_in,
        n_out: r.units,
        offset: r.offset,
    }));
    out
}

fn checksum(payload: &Payload) -> Result<String> {
    let bytes = serde_json::to_vec(payload)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn model_to_string(params: &NetworkParams, stats: &NormStats) -> Result<String> {
    let payload = Payload {
        stage: params.stage,
        architecture: params.arch,
        layers: layers(&params.layout),
        theta: params.theta.clone(),
        norm_stats: stats.clone(),
    };
    let file = ModelFile { schema_version: MODEL_SCHEMA_VERSION, checksum: checksum(&payload)?, payload };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_str(text: &str) -> Result<(NetworkParams, NormStats)> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("malformed model file: {e}")))?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Model(format!(
            "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    if checksum(&file.payload)? != file.checksum {
        return Err(Error::Model("model checksum mismatch".into()));
    }
    let p = file.payload;
    let layout = Layout::new(&p.architecture);
    if p.theta.len() != layout.total || p.layers != layers(&layout) {
        return Err(Error::Model("model layer table does not match its architecture".into()));
    }
    Ok((NetworkParams { arch: p.architecture, layout, theta: p.theta, stage: p.stage }, p.norm_stats))
}

pub fn save_model(params: &NetworkParams, stats: &NormStats, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(params, stats)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(NetworkParams, NormStats)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

/// Loads a model and checks it has finished at least `needed`.
pub fn load_model_for(path: &Path, needed: Stage, purpose: &str) -> Result<(NetworkParams, NormStats)> {
    let (p, s) = load_model(path)?;
    if p.stage < needed {
        return Err(Error::Model(format!(
            "{purpose} needs a {} model, {} holds a {} model",
            needed.tag(),
            path.display(),
            p.stage.tag()
        )));
    }
    Ok((p, s))
}
