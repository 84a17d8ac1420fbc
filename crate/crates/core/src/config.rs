//! Run configuration: one TOML file with a section per subsystem.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. `key=value` overrides address nested keys with
//! dots (`train.multi_step.epochs=10`, `materials.cake.height=0.03`); the
//! value is parsed as a TOML value and falls back to a plain string.
//!
//! Per-section seeds are mixed with the global `seed` (see [`derive_seed`])
//! so that changing the global seed changes every random stream.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{CollectionRanges, TrialLimits};
use crate::dataset::ForceInput;
use crate::dynmodel::TrainConfig;
use crate::eval::EvalConfig;
use crate::mpc::MpcConfig;
use crate::plant::{MaterialLibrary, MaterialOverride, PlantConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Samples per block (`M`).
    pub block_len: usize,
    pub trials_per_material: usize,
    pub materials: Vec<String>,
    /// Materials that must never enter the training set.
    pub held_out: Vec<String>,
    pub train_fraction: f64,
    pub force_input: ForceInput,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            block_len: 10,
            trials_per_material: 40,
            materials: ["cake", "cucumber", "zucchini", "cheese", "bell-pepper", "lemon"]
                .map(String::from)
                .to_vec(),
            held_out: vec!["potato".into(), "carrot".into()],
            train_fraction: 0.8,
            force_input: ForceInput::Reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub plant: PlantConfig,
    pub controller: CollectionRanges,
    pub limits: TrialLimits,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub mpc: MpcConfig,
    pub eval: EvalConfig,
    pub materials: BTreeMap<String, MaterialOverride>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut merged = match toml::Value::try_from(RunConfig::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("default configuration is not a table".into())),
        };
        merge(&mut merged, value);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.train.validate()?;
        self.mpc.validate()?;
        self.eval.validate()?;
        let lib = self.library()?;
        for m in self.dataset.materials.iter().chain(&self.dataset.held_out).chain(&self.eval.materials) {
            lib.get(m)?;
        }
        if let Some(m) = self
            .dataset
            .materials
            .iter()
            .find(|m| self.dataset.held_out.iter().any(|h| canonical(h) == canonical(m)))
        {
            return Err(Error::Config(format!("material '{m}' is both a training and a held-out material")));
        }
        if self.dataset.block_len != self.train.arch.block_len {
            return Err(Error::Config(format!(
                "dataset.block_len = {} but train.arch.block_len = {}",
                self.dataset.block_len, self.train.arch.block_len
            )));
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(Error::Config("dataset.train_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn library(&self) -> Result<MaterialLibrary> {
        MaterialLibrary::new(self.materials.clone())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the effective configuration into `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

/// Overlays `top` onto `base`, recursing into tables; other values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn canonical(label: &str) -> String {
    crate::plant::make_material(label).map(|m| m.name).unwrap_or_else(|_| label.to_string())
}

/// Applies one `dotted.key=value` override to a TOML table.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key segment")));
    }
    let value = parse_value(raw.trim());
    let mut table = root;
    for seg in &path[..path.len() - 1] {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{assignment}': '{seg}' is not a section")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Stable 64-bit seed for a named random stream.
pub fn derive_seed(global: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
