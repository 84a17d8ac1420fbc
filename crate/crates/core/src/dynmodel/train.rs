//! Three-stage training: encoder pretraining as an autoencoder, single-step
//! prediction with the recurrent core frozen, then multi-step
//! backpropagation through time.

use std::ops::Range;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{autoencoder_loss, sequence_loss, Architecture, Decoder, NetworkParams, Sequence, Stage};
use crate::dataset::{Block, Dataset, NormStats};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub seed: u64,
    pub autoencoder: StageConfig,
    pub single_step: StageConfig,
    pub multi_step: StageConfig,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Blocks per unrolled horizon (`H_b`).
    pub horizon_blocks: usize,
    /// Teacher-forced blocks that build the latent state before a rollout.
    pub warmup_blocks: usize,
    /// Offset in blocks between consecutive multi-step training windows.
    pub sequence_stride: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            seed: 0,
            autoencoder: StageConfig { learning_rate: 1e-3, epochs: 50, batch_size: 32 },
            single_step: StageConfig { learning_rate: 1e-3, epochs: 100, batch_size: 32 },
            multi_step: StageConfig { learning_rate: 3e-4, epochs: 100, batch_size: 32 },
            momentum: 0.9,
            clip_norm: 5.0,
            horizon_blocks: 5,
            warmup_blocks: 3,
            sequence_stride: 1,
            divergence_factor: 10.0,
            divergence_patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.horizon_blocks == 0 {
            return bad("horizon_blocks must be >= 1");
        }
        if self.sequence_stride == 0 {
            return bad("sequence_stride must be >= 1");
        }
        if self.arch.block_len == 0 || self.arch.hidden == 0 || self.arch.rnn_units == 0 || self.arch.latent_per_step == 0 {
            return bad("architecture dimensions must be >= 1");
        }
        for (name, s) in [("autoencoder", &self.autoencoder), ("single_step", &self.single_step), ("multi_step", &self.multi_step)] {
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) || s.batch_size == 0 {
                return bad(&format!("{name}: learning_rate must be > 0 and batch_size >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.clip_norm <= 0.0 {
            return bad("momentum must be in [0, 1) and clip_norm > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub stage: String,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

/// Normalised blocks grouped by trial.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Vec<Vec<Block>>,
    pub validation: Vec<Vec<Block>>,
    pub norm: NormStats,
}

impl TrainingData {
    /// Takes the (already normalised) blocks of a loaded dataset.
    pub fn from_dataset(ds: &Dataset) -> Self {
        TrainingData {
            train: ds.train.trials.clone(),
            validation: ds.validation.trials.clone(),
            norm: ds.manifest.norm_stats.clone(),
        }
    }

    fn flat(set: &[Vec<Block>]) -> Vec<&Block> {
        set.iter().flatten().collect()
    }
}

/// Start indices `(trial, block)` of every window of `len` consecutive blocks.
pub fn windows(set: &[Vec<Block>], len: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (t, blocks) in set.iter().enumerate() {
        if blocks.len() >= len {
            out.extend((0..=blocks.len() - len).step_by(stride).map(|s| (t, s)));
        }
    }
    out
}

fn window_loss(
    net: &NetworkParams,
    blocks: &[Block],
    warmup: usize,
    grad: Option<&mut [f64]>,
    train_recurrent: bool,
) -> (f64, usize) {
    let x: Vec<&[f64]> = blocks.iter().map(|b| b.x.as_slice()).collect();
    let v: Vec<&[f64]> = blocks.iter().map(|b| b.v.as_slice()).collect();
    let target: Vec<&[f64]> = blocks.iter().map(|b| b.target.as_slice()).collect();
    let seq = Sequence { x: &x, v: &v, target: &target, teacher_forced: warmup + 1, loss_from: warmup };
    sequence_loss(net, &seq, grad, train_recurrent)
}

/// Validation or training MSE of single-block predictions. With `warmup > 0`
/// the latent state is built from the preceding measured blocks; otherwise it
/// starts at zero for every block.
pub fn single_step_mse(net: &NetworkParams, set: &[Vec<Block>], warmup: usize) -> f64 {
    let w = windows(set, warmup + 1, 1);
    let parts: Vec<(f64, usize)> = w
        .par_iter()
        .map(|&(t, s)| window_loss(net, &set[t][s..s + warmup + 1], warmup, None, false))
        .collect();
    ratio(&parts)
}

/// MSE over all `horizon` blocks of closed-loop rollouts following `warmup`
/// teacher-forced blocks.
pub fn multi_step_mse(net: &NetworkParams, set: &[Vec<Block>], warmup: usize, horizon: usize) -> f64 {
    let len = warmup + horizon;
    let w = windows(set, len, 1);
    let parts: Vec<(f64, usize)> = w
        .par_iter()
        .map(|&(t, s)| window_loss(net, &set[t][s..s + len], warmup, None, false))
        .collect();
    ratio(&parts)
}

/// Predicting that the next block repeats the current block's relative
/// positions, scored on the same blocks as [`single_step_mse`].
pub fn persistence_mse(set: &[Vec<Block>], warmup: usize) -> f64 {
    let mut sse = 0.0;
    let mut n = 0;
    for &(t, s) in &windows(set, warmup + 1, 1) {
        let b = &set[t][s + warmup];
        for (p, tg) in b.positions().iter().zip(&b.target) {
            sse += (p - tg) * (p - tg);
            n += 1;
        }
    }
    sse / n.max(1) as f64
}

fn ratio(parts: &[(f64, usize)]) -> f64 {
    let (s, n) = parts.iter().fold((0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
    s / n.max(1) as f64
}

/// Flat view used by the optimiser.
trait Trainable: Sync {
    fn n_params(&self) -> usize;
    fn update(&mut self, step: impl Fn(usize, &mut f64));
    fn snapshot(&self) -> Vec<f64>;
}

impl Trainable for NetworkParams {
    fn n_params(&self) -> usize {
        self.theta.len()
    }
    fn update(&mut self, step: impl Fn(usize, &mut f64)) {
        self.theta.iter_mut().enumerate().for_each(|(i, v)| step(i, v));
    }
    fn snapshot(&self) -> Vec<f64> {
        self.theta.clone()
    }
}

struct AePair {
    net: NetworkParams,
    dec: Decoder,
}

impl Trainable for AePair {
    fn n_params(&self) -> usize {
        self.net.theta.len() + self.dec.theta.len()
    }
    fn update(&mut self, step: impl Fn(usize, &mut f64)) {
        let n = self.net.theta.len();
        self.net.theta.iter_mut().enumerate().for_each(|(i, v)| step(i, v));
        self.dec.theta.iter_mut().enumerate().for_each(|(i, v)| step(n + i, v));
    }
    fn snapshot(&self) -> Vec<f64> {
        self.net.theta.iter().chain(&self.dec.theta).copied().collect()
    }
}

struct Loop<'a> {
    name: &'static str,
    stage: &'a StageConfig,
    cfg: &'a TrainConfig,
    /// Parameter indices that must not move.
    frozen: Option<Range<usize>>,
    seed: u64,
}

impl Loop<'_> {
    /// Minibatch SGD with momentum and global-norm clipping. `loss` returns the
    /// squared-error sum and term count of one sample, accumulating its
    /// gradient when given a buffer.
    fn run<P, L, V>(&self, params: &mut P, n_samples: usize, loss: L, val: V, metrics: &mut Vec<MetricRow>) -> Result<f64>
    where
        P: Trainable,
        L: Fn(&P, usize, Option<&mut [f64]>) -> (f64, usize) + Sync,
        V: Fn(&P) -> f64,
    {
        if n_samples == 0 {
            return Err(Error::Training { message: format!("{}: no training samples", self.name), snapshot: None });
        }
        let n = params.n_params();
        let all: Vec<usize> = (0..n_samples).collect();
        let full_loss = |p: &P| -> f64 {
            let parts: Vec<(f64, usize)> = all.par_iter().map(|&i| loss(p, i, None)).collect();
            ratio(&parts)
        };
        let initial = full_loss(params);
        info!("{}: initial training loss {initial:.6e} over {n_samples} samples", self.name);
        let fault = |message: String, p: &P| Error::Training { message, snapshot: Some(p.snapshot()) };
        if !initial.is_finite() {
            return Err(fault(format!("{}: non-finite initial loss", self.name), params));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut vel = vec![0.0; n];
        let mut order = all.clone();
        let mut above = 0;
        let mut last = initial;
        for epoch in 0..self.stage.epochs {
            order.shuffle(&mut rng);
            let (mut e_sse, mut e_n) = (0.0, 0usize);
            for batch in order.chunks(self.stage.batch_size) {
                let per: Vec<(Vec<f64>, f64, usize)> = batch
                    .par_iter()
                    .map(|&i| {
                        let mut g = vec![0.0; n];
                        let (s, c) = loss(params, i, Some(&mut g));
                        (g, s, c)
                    })
                    .collect();
                let mut grad = vec![0.0; n];
                let mut count = 0;
                for (g, s, c) in &per {
                    grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    e_sse += s;
                    count += c;
                }
                e_n += count;
                let scale = 1.0 / count.max(1) as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                if let Some(r) = &self.frozen {
                    grad[r.clone()].iter_mut().for_each(|g| *g = 0.0);
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(fault(format!("{}: non-finite gradient in epoch {epoch}", self.name), params));
                }
                if norm > self.cfg.clip_norm {
                    let c = self.cfg.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= c);
                }
                for (v, g) in vel.iter_mut().zip(&grad) {
                    *v = self.cfg.momentum * *v + g;
                }
                let lr = self.stage.learning_rate;
                let frozen = self.frozen.clone();
                params.update(|i, th| {
                    if frozen.as_ref().is_none_or(|r| !r.contains(&i)) {
                        *th -= lr * vel[i];
                    }
                });
            }
            let train_loss = e_sse / e_n.max(1) as f64;
            let val_loss = val(params);
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(fault(format!("{}: non-finite loss in epoch {epoch}", self.name), params));
            }
            debug!("{} epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}", self.name);
            metrics.push(MetricRow { epoch, stage: self.name.to_string(), train_loss, val_loss });
            if train_loss > self.cfg.divergence_factor * initial {
                above += 1;
                if above >= self.cfg.divergence_patience {
                    return Err(fault(
                        format!(
                            "{}: diverged, loss {train_loss:.3e} > {}x initial {initial:.3e} for {above} epochs",
                            self.name, self.cfg.divergence_factor
                        ),
                        params,
                    ));
                }
            } else {
                above = 0;
            }
            last = train_loss;
        }
        let final_loss = if self.stage.epochs > 0 { full_loss(params) } else { last };
        info!("{}: final training loss {final_loss:.6e}", self.name);
        Ok(final_loss)
    }
}

fn require_stage(net: &NetworkParams, needed: Stage, op: &str) -> Result<()> {
    if net.stage != needed {
        return Err(Error::Model(format!(
            "{op} requires a {} checkpoint, got {}",
            needed.tag(),
            net.stage.tag()
        )));
    }
    Ok(())
}

/// Losses recorded by a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub train: f64,
    pub validation: f64,
}

pub fn stage1_autoencoder(
    net: NetworkParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    metrics: &mut Vec<MetricRow>,
) -> Result<(NetworkParams, StageLosses)> {
    require_stage(&net, Stage::Initialized, "autoencoder training")?;
    let train = TrainingData::flat(&data.train);
    let val = TrainingData::flat(&data.validation);
    let dec = Decoder::init(&cfg.arch, cfg.seed.wrapping_add(101));
    let mut pair = AePair { net, dec };
    let n_net = pair.net.theta.len();
    let sample = |p: &AePair, b: &Block, grad: Option<&mut [f64]>| -> (f64, usize) {
        let s = match grad {
            Some(g) => {
                let (gn, gd) = g.split_at_mut(n_net);
                autoencoder_loss(&p.net, &p.dec, &b.x, Some((gn, gd)))
            }
            None => autoencoder_loss(&p.net, &p.dec, &b.x, None),
        };
        (s, b.x.len())
    };
    let val_loss = |p: &AePair| {
        let parts: Vec<(f64, usize)> = val.par_iter().map(|b| sample(p, b, None)).collect();
        ratio(&parts)
    };
    let lp = Loop { name: Stage::Autoencoder.tag(), stage: &cfg.autoencoder, cfg, frozen: None, seed: cfg.seed.wrapping_add(1) };
    let train_loss = lp.run(&mut pair, train.len(), |p, i, g| sample(p, train[i], g), val_loss, metrics)?;
    let validation = val_loss(&pair);
    let mut net = pair.net;
    net.stage = Stage::Autoencoder;
    Ok((net, StageLosses { train: train_loss, validation }))
}

pub fn stage2_single_step(
    mut net: NetworkParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    metrics: &mut Vec<MetricRow>,
) -> Result<(NetworkParams, StageLosses)> {
    require_stage(&net, Stage::Autoencoder, "single-step training")?;
    let train = TrainingData::flat(&data.train);
    let frozen = net.layout.recurrent_range();
    let lp = Loop { name: Stage::SingleStep.tag(), stage: &cfg.single_step, cfg, frozen: Some(frozen), seed: cfg.seed.wrapping_add(2) };
    let val = |p: &NetworkParams| single_step_mse(p, &data.validation, 0);
    let train_loss = lp.run(
        &mut net,
        train.len(),
        |p, i, g| window_loss(p, std::slice::from_ref(train[i]), 0, g, false),
        val,
        metrics,
    )?;
    let validation = val(&net);
    net.stage = Stage::SingleStep;
    Ok((net, StageLosses { train: train_loss, validation }))
}

pub fn stage3_multi_step(
    mut net: NetworkParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    metrics: &mut Vec<MetricRow>,
) -> Result<(NetworkParams, StageLosses)> {
    require_stage(&net, Stage::SingleStep, "multi-step training")?;
    let len = cfg.warmup_blocks + cfg.horizon_blocks;
    let w = windows(&data.train, len, cfg.sequence_stride);
    if w.is_empty() {
        warn!("no training trial is long enough for {len}-block windows");
    }
    let lp = Loop { name: Stage::MultiStep.tag(), stage: &cfg.multi_step, cfg, frozen: None, seed: cfg.seed.wrapping_add(3) };
    let val = |p: &NetworkParams| multi_step_mse(p, &data.validation, cfg.warmup_blocks, cfg.horizon_blocks);
    let train_loss = lp.run(
        &mut net,
        w.len(),
        |p, i, g| {
            let (t, s) = w[i];
            window_loss(p, &data.train[t][s..s + len], cfg.warmup_blocks, g, true)
        },
        val,
        metrics,
    )?;
    let validation = val(&net);
    net.stage = Stage::MultiStep;
    Ok((net, StageLosses { train: train_loss, validation }))
}

/// Validation scores of the finished curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Absent when the stage ran in an earlier invocation.
    pub autoencoder: Option<StageLosses>,
    pub single_step: Option<StageLosses>,
    pub multi_step: StageLosses,
    /// Final model, one block ahead with warm-up.
    pub val_single_step_mse: f64,
    pub val_persistence_mse: f64,
    /// `H_b`-block rollout error of the final model.
    pub val_multi_step_mse: f64,
    /// Best `H_b`-block rollout error of the stage-2 model (with or without warm-up).
    pub val_naive_multi_step_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub metrics: Vec<MetricRow>,
    pub summary: TrainSummary,
}

pub fn train_curriculum(data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let block_len = data.train.iter().flatten().next().map(|b| b.len());
    if block_len != Some(cfg.arch.block_len) {
        return Err(Error::Config(format!(
            "dataset block length {:?} does not match network block length {}",
            block_len, cfg.arch.block_len
        )));
    }
    let mut metrics = Vec::new();
    let net = NetworkParams::init(cfg.arch, cfg.seed);
    let (net, ae) = stage1_autoencoder(net, data, cfg, &mut metrics)?;
    let (s2, ss) = stage2_single_step(net, data, cfg, &mut metrics)?;
    let (w, h) = (cfg.warmup_blocks, cfg.horizon_blocks);
    let naive = multi_step_mse(&s2, &data.validation, w, h).min(multi_step_mse(&s2, &data.validation, 0, h));
    let (s3, ms) = stage3_multi_step(s2, data, cfg, &mut metrics)?;
    let summary = TrainSummary {
        autoencoder: Some(ae),
        single_step: Some(ss),
        multi_step: ms,
        val_single_step_mse: single_step_mse(&s3, &data.validation, w),
        val_persistence_mse: persistence_mse(&data.validation, w),
        val_multi_step_mse: ms.validation,
        val_naive_multi_step_mse: naive,
    };
    info!("training summary: {summary:?}");
    Ok(TrainOutcome { params: s3, metrics, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture { block_len: 2, hidden: 6, latent_per_step: 3, rnn_units: 4 }
    }

    fn synthetic(trials: usize, blocks: usize, seed: u64) -> Vec<Vec<Block>> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials)
            .map(|_| {
                let vel: f64 = rng.random_range(-1.0..1.0);
                (0..blocks)
                    .map(|b| {
                        let f: f64 = rng.random_range(-1.0..1.0);
                        let x = vec![vel, vel, f, -f, vel, vel, f, -f];
                        Block { x, v: vec![f, -f, f, -f], target: vec![vel + 0.3 * f, vel, vel + 0.3 * f, vel], block_index: b }
                    })
                    .collect()
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        let s = StageConfig { learning_rate: 0.02, epochs, batch_size: 8 };
        TrainConfig {
            arch: arch(),
            autoencoder: s,
            single_step: s,
            multi_step: StageConfig { learning_rate: 0.01, ..s },
            horizon_blocks: 2,
            warmup_blocks: 1,
            ..TrainConfig::default()
        }
    }

    fn data() -> TrainingData {
        TrainingData { train: synthetic(6, 8, 1), validation: synthetic(2, 8, 2), norm: NormStats::identity() }
    }

    #[test]
    fn stage_two_leaves_recurrent_weights_bitwise() {
        let d = data();
        let c = cfg(5);
        let mut m = Vec::new();
        let (net, _) = stage1_autoencoder(NetworkParams::init(c.arch, 3), &d, &c, &mut m).unwrap();
        let r = net.layout.recurrent_range();
        let before: Vec<u64> = net.theta[r.clone()].iter().map(|v| v.to_bits()).collect();
        let other_before = net.theta[..r.start].to_vec();
        let (net2, _) = stage2_single_step(net, &d, &c, &mut m).unwrap();
        let after: Vec<u64> = net2.theta[r.clone()].iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        assert_ne!(other_before, net2.theta[..r.start].to_vec());
    }

    #[test]
    fn curriculum_learns_and_records_metrics() {
        let d = data();
        let c = cfg(30);
        let init = NetworkParams::init(c.arch, c.seed);
        let init_mse = single_step_mse(&init, &d.train, 0);
        let out = train_curriculum(&d, &c).unwrap();
        assert_eq!(out.metrics.len(), 90);
        assert!(out.metrics.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
        assert!(single_step_mse(&out.params, &d.train, 0) < init_mse);
        assert_eq!(out.params.stage, Stage::MultiStep);
        // Deterministic for a fixed seed.
        let again = train_curriculum(&d, &c).unwrap();
        assert_eq!(out.params.theta, again.params.theta);
    }

    #[test]
    fn autoencoder_reduces_loss_on_constant_data() {
        let block = Block { x: vec![0.5, -0.2, 0.1, 0.3, 0.5, -0.2, 0.1, 0.3], v: vec![0.0; 4], target: vec![0.0; 4], block_index: 0 };
        let d = TrainingData { train: vec![vec![block.clone(); 16]], validation: vec![vec![block; 2]], norm: NormStats::identity() };
        let c = TrainConfig { autoencoder: StageConfig { learning_rate: 0.05, epochs: 100, batch_size: 4 }, ..cfg(1) };
        let mut m = Vec::new();
        let (_, losses) = stage1_autoencoder(NetworkParams::init(c.arch, 1), &d, &c, &mut m).unwrap();
        assert!(losses.train < 1e-4, "{losses:?}");
        assert!(m.last().unwrap().train_loss < m[0].train_loss);
    }

    #[test]
    fn stage_order_is_enforced() {
        let d = data();
        let c = cfg(1);
        let mut m = Vec::new();
        let net = NetworkParams::init(c.arch, 1);
        assert!(matches!(stage2_single_step(net.clone(), &d, &c, &mut m), Err(Error::Model(_))));
        assert!(matches!(stage3_multi_step(net, &d, &c, &mut m), Err(Error::Model(_))));
    }

    #[test]
    fn divergence_aborts_with_snapshot() {
        let d = data();
        let mut c = cfg(20);
        c.single_step.learning_rate = 50.0;
        c.momentum = 0.99;
        c.clip_norm = 1e6;
        c.divergence_factor = 1.5;
        let mut m = Vec::new();
        let (net, _) = stage1_autoencoder(NetworkParams::init(c.arch, 1), &d, &c, &mut m).unwrap();
        match stage2_single_step(net, &d, &c, &mut m) {
            Err(Error::Training { snapshot, .. }) => assert!(snapshot.is_some()),
            other => panic!("expected training fault, got {other:?}"),
        }
    }

    #[test]
    fn persistence_scores_identity_blocks_at_zero() {
        let b = Block { x: vec![1.0, 2.0, 0.0, 0.0], v: vec![0.0; 2], target: vec![1.0, 2.0], block_index: 0 };
        assert_eq!(persistence_mse(&[vec![b.clone(), b]], 0), 0.0);
    }

    #[test]
    fn windows_respect_length_and_stride() {
        let d = synthetic(2, 7, 0);
        assert_eq!(windows(&d, 3, 1).len(), 10);
        assert_eq!(windows(&d, 3, 2), vec![(0, 0), (0, 2), (0, 4), (1, 0), (1, 2), (1, 4)]);
        assert!(windows(&d, 8, 1).is_empty());
    }
}
