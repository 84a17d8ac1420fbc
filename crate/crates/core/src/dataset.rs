//! Trial logs to network blocks.
//!
//! A log of `n` samples is cut into `n / M` non-overlapping blocks of `M`
//! samples; the trailing remainder is dropped. Block `b` carries
//!
//! * `x`: per sample `[rel_y, rel_z, F_s_y, F_s_z]`, positions relative to the
//!   last absolute position of block `b - 1` (block 0 uses the first sample);
//! * `v`: the force channel of block `b + 1`, i.e. over the interval being
//!   predicted: either its reference forces (what the controller is told,
//!   and what the MPC chooses) or its sensed forces, see [`ForceInput`];
//! * `target`: the relative positions of block `b + 1`.
//!
//! The last block only serves as a target, so a log yields `n / M - 1` blocks.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{DesiredTrajectory, Excitation, Gains, Termination, TrialLog};
use crate::{Error, Result, Vec2};

/// Channels per sample in `x`.
pub const STATE_CHANNELS: usize = 4;
/// Channels per sample in `v` and `target`.
pub const POS_CHANNELS: usize = 2;

/// Which logged force fills the `v` channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceInput {
    /// `F_r`, the admittance controller's input.
    #[default]
    Reference,
    /// `F_s`, the force-sensor reading.
    Sensed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `M x 4`, row-major by sample.
    pub x: Vec<f64>,
    /// `M x 2`.
    pub v: Vec<f64>,
    /// `M x 2`.
    pub target: Vec<f64>,
    pub block_index: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.x.len() / STATE_CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Position channels of `x` (`M x 2`).
    pub fn positions(&self) -> Vec<f64> {
        self.x
            .chunks_exact(STATE_CHANNELS)
            .flat_map(|s| [s[0], s[1]])
            .collect()
    }
}

/// Relative positions of `positions` with respect to `anchor`, flattened.
fn relative(positions: &[Vec2], anchor: Vec2) -> Vec<f64> {
    positions
        .iter()
        .flat_map(|p| [p.y - anchor.y, p.z - anchor.z])
        .collect()
}

/// Builds the `x` array for a block of measured positions and forces.
pub fn state_block(positions: &[Vec2], forces: &[Vec2], anchor: Vec2) -> Vec<f64> {
    positions
        .iter()
        .zip(forces)
        .flat_map(|(p, f)| [p.y - anchor.y, p.z - anchor.z, f.y, f.z])
        .collect()
}

pub fn blockify(log: &TrialLog, m: usize, input: ForceInput) -> Result<Vec<Block>> {
    if m == 0 {
        return Err(Error::Data("block length must be >= 1".into()));
    }
    let n = log.len();
    if n < 2 * m {
        return Err(Error::Data(format!(
            "trial log of {n} samples is shorter than two blocks of {m}"
        )));
    }
    let n_blocks = n / m;
    let pos: Vec<Vec2> = log.samples.iter().map(|s| s.p).collect();
    let frc: Vec<Vec2> = log.samples.iter().map(|s| s.f_s).collect();
    let ctl: Vec<Vec2> = match input {
        ForceInput::Reference => log.samples.iter().map(|s| s.f_r).collect(),
        ForceInput::Sensed => frc.clone(),
    };
    let anchor = |b: usize| if b == 0 { pos[0] } else { pos[b * m - 1] };
    let blocks = (0..n_blocks - 1)
        .map(|b| {
            let cur = b * m..(b + 1) * m;
            let next = (b + 1) * m..(b + 2) * m;
            Block {
                x: state_block(&pos[cur.clone()], &frc[cur], anchor(b)),
                v: ctl[next.clone()].iter().flat_map(|f| [f.y, f.z]).collect(),
                target: relative(&pos[next], anchor(b + 1)),
                block_index: b,
            }
        })
        .collect();
    Ok(blocks)
}

/// Per-channel mean and population standard deviation over a training set.
/// `x` channels 0-1 normalise positions (and targets), 2-3 sensed forces;
/// `v` has its own pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; STATE_CHANNELS],
    pub std: [f64; STATE_CHANNELS],
    pub v_mean: [f64; POS_CHANNELS],
    pub v_std: [f64; POS_CHANNELS],
    /// Channels whose variance was zero and got `std = 1` (`x` then `v`).
    pub degenerate: [bool; STATE_CHANNELS + POS_CHANNELS],
    pub computed_over: String,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; STATE_CHANNELS],
            std: [1.0; STATE_CHANNELS],
            v_mean: [0.0; POS_CHANNELS],
            v_std: [1.0; POS_CHANNELS],
            degenerate: [false; STATE_CHANNELS + POS_CHANNELS],
            computed_over: "identity".into(),
        }
    }

    pub fn normalize_state(&self, x: &mut [f64]) {
        for s in x.chunks_exact_mut(STATE_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn denormalize_state(&self, x: &mut [f64]) {
        for s in x.chunks_exact_mut(STATE_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
    }

    pub fn normalize_positions(&self, a: &mut [f64]) {
        for s in a.chunks_exact_mut(POS_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn denormalize_positions(&self, a: &mut [f64]) {
        for s in a.chunks_exact_mut(POS_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
    }

    pub fn normalize_v(&self, a: &mut [f64]) {
        for s in a.chunks_exact_mut(POS_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = (*v - self.v_mean[c]) / self.v_std[c];
            }
        }
    }

    pub fn denormalize_v(&self, a: &mut [f64]) {
        for s in a.chunks_exact_mut(POS_CHANNELS) {
            for (c, v) in s.iter_mut().enumerate() {
                *v = *v * self.v_std[c] + self.v_mean[c];
            }
        }
    }

    pub fn normalize_force(&self, f: Vec2) -> Vec2 {
        Vec2::new((f.y - self.v_mean[0]) / self.v_std[0], (f.z - self.v_mean[1]) / self.v_std[1])
    }
}

/// Mean and population std per channel of row-major `width`-channel data.
/// Zero-variance channels get `std = 1` and are flagged.
fn channel_moments<'a, const W: usize>(data: impl Iterator<Item = &'a [f64]> + Clone) -> ([f64; W], [f64; W], [bool; W]) {
    let mut sum = [0.0; W];
    let mut count = 0usize;
    for a in data.clone() {
        for s in a.chunks_exact(W) {
            for c in 0..W {
                sum[c] += s[c];
            }
            count += 1;
        }
    }
    let mean = sum.map(|s| s / count.max(1) as f64);
    // Second pass for numerically stable variance.
    let mut sum_sq = [0.0; W];
    for a in data {
        for s in a.chunks_exact(W) {
            for c in 0..W {
                let d = s[c] - mean[c];
                sum_sq[c] += d * d;
            }
        }
    }
    let mut std = [1.0; W];
    let mut degenerate = [false; W];
    for c in 0..W {
        let var = sum_sq[c] / count.max(1) as f64;
        if var > 0.0 {
            std[c] = var.sqrt();
        } else {
            degenerate[c] = true;
        }
    }
    (mean, std, degenerate)
}

pub fn fit_norm_stats<'a, I>(blocks: I, computed_over: &str) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Block>,
{
    let blocks: Vec<&Block> = blocks.into_iter().collect();
    if blocks.iter().all(|b| b.is_empty()) {
        return Err(Error::Data("cannot fit normalisation on an empty training set".into()));
    }
    let (mean, std, dx) = channel_moments::<STATE_CHANNELS>(blocks.iter().map(|b| b.x.as_slice()));
    let (v_mean, v_std, dv) = channel_moments::<POS_CHANNELS>(blocks.iter().map(|b| b.v.as_slice()));
    let mut degenerate = [false; STATE_CHANNELS + POS_CHANNELS];
    degenerate[..STATE_CHANNELS].copy_from_slice(&dx);
    degenerate[STATE_CHANNELS..].copy_from_slice(&dv);
    for (c, _) in degenerate.iter().enumerate().filter(|(_, d)| **d) {
        warn!("normalisation channel {c} has zero variance; using std = 1");
    }
    Ok(NormStats { mean, std, v_mean, v_std, degenerate, computed_over: computed_over.to_string() })
}

pub fn apply_norm(block: &Block, stats: &NormStats) -> Block {
    let mut b = block.clone();
    stats.normalize_state(&mut b.x);
    stats.normalize_v(&mut b.v);
    stats.normalize_positions(&mut b.target);
    b
}

pub fn invert_norm(block: &Block, stats: &NormStats) -> Block {
    let mut b = block.clone();
    stats.denormalize_state(&mut b.x);
    stats.denormalize_v(&mut b.v);
    stats.denormalize_positions(&mut b.target);
    b
}

/// Reassembles absolute positions from the position channels of consecutive
/// blocks, starting from the trial's initial position.
pub fn reconstruct_positions(blocks: &[Block], initial: Vec2) -> Vec<Vec2> {
    let mut anchor = initial;
    let mut out = Vec::new();
    for b in blocks {
        for s in b.x.chunks_exact(STATE_CHANNELS) {
            out.push(Vec2::new(anchor.y + s[0], anchor.z + s[1]));
        }
        anchor = *out.last().expect("non-empty block");
    }
    out
}

/// Metadata for one collected trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    /// File name relative to the manifest's directory.
    pub file: String,
    pub material: String,
    pub plant_seed: u64,
    pub gains: Gains,
    pub trajectory: DesiredTrajectory,
    pub excitation: Option<Excitation>,
    pub samples: usize,
    pub termination: Termination,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub block_len: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub trials: Vec<TrialRecord>,
    pub train_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
    /// Materials that must never appear among `trials`.
    pub held_out: Vec<String>,
    pub force_input: ForceInput,
    pub norm_stats: NormStats,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
            other => {
                return Err(Error::Data(format!(
                    "manifest {} has schema_version {other:?}, expected {MANIFEST_SCHEMA_VERSION}",
                    path.display()
                )))
            }
        }
        let m: DatasetManifest = serde_json::from_value(value)?;
        m.check_held_out()?;
        Ok(m)
    }

    pub fn training_materials(&self) -> BTreeSet<String> {
        self.trials.iter().map(|t| t.material.clone()).collect()
    }

    pub fn check_held_out(&self) -> Result<()> {
        let used = self.training_materials();
        if let Some(bad) = self.held_out.iter().find(|h| used.contains(*h)) {
            return Err(Error::Data(format!("held-out material '{bad}' appears in the dataset")));
        }
        Ok(())
    }
}

/// Splits trial ids at trial granularity. `train_fraction` of the trials
/// (rounded, at least one per side) go to training.
pub fn split(ids: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ids.len() < 2 {
        return Err(Error::Data(format!("need at least 2 trials to split, got {}", ids.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut train = shuffled[..n_train].to_vec();
    let mut val = shuffled[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Normalised blocks, grouped by trial so sequences never straddle trials.
#[derive(Debug, Clone)]
pub struct BlockSet {
    pub trials: Vec<Vec<Block>>,
}

impl BlockSet {
    pub fn n_blocks(&self) -> usize {
        self.trials.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.trials.iter().flatten()
    }
}

/// A loaded dataset: normalised training and validation blocks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: BlockSet,
    pub validation: BlockSet,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let dir: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let load = |ids: &[usize]| -> Result<BlockSet> {
            let trials = ids
                .iter()
                .map(|id| {
                    let rec = manifest
                        .trials
                        .iter()
                        .find(|t| t.id == *id)
                        .ok_or_else(|| Error::Data(format!("manifest lists unknown trial id {id}")))?;
                    let log = TrialLog::load(&dir.join(&rec.file))?;
                    let blocks = blockify(&log, manifest.block_len, manifest.force_input)?;
                    Ok(blocks.iter().map(|b| apply_norm(b, &manifest.norm_stats)).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BlockSet { trials })
        };
        let train = load(&manifest.train_ids)?;
        let validation = load(&manifest.validation_ids)?;
        Ok(Dataset { manifest, train, validation })
    }

    pub fn from_blocks(manifest: DatasetManifest, train: BlockSet, validation: BlockSet) -> Self {
        Dataset { manifest, train, validation }
    }
}
