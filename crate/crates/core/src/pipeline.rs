//! End-to-end commands: collect, train, run, eval.
//!
//! Output layout under the output directory:
//!
//! ```text
//! dataset/manifest.json, dataset/trials/trial_NNNN.csv
//! model/model_<stage>.json, model/metrics.csv, model/summary.json
//! run/deploy_<material>_<seed>.csv
//! report/...
//! ```
//!
//! Every command writes a `config.toml` snapshot next to its outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig};
use crate::controller::{run_trajectory_trial, sample_trial_setup, Termination, TrialLog};
use crate::dataset::{blockify, fit_norm_stats, split, Dataset, DatasetManifest, TrialRecord, MANIFEST_SCHEMA_VERSION};
use crate::dynmodel::{
    load_model_for, save_model, stage1_autoencoder, stage2_single_step, stage3_multi_step, write_metrics_csv,
    multi_step_mse, persistence_mse, single_step_mse, MetricRow, NetworkParams, Stage, TrainSummary, TrainingData,
};
use crate::eval::{
    check_mpc_invariants, emit_report, force_critical_scenario, run_comparison, ComparisonReport, EvalContext,
    ForceCriticalReport, InvariantCheck,
};
use crate::mpc::NetworkPredictor;
use crate::plant::{MaterialLibrary, Plant, PlantConfig};
use crate::{Error, Result, Vec2};

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, body: &str) -> Result<()> {
    std::fs::write(p, body).map_err(|e| Error::io(p, e))
}

pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

pub fn model_dir(out: &Path) -> PathBuf {
    out.join("model")
}

pub fn model_path(out: &Path, stage: Stage) -> PathBuf {
    model_dir(out).join(format!("model_{}.json", stage.tag()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectSummary {
    pub trials: usize,
    pub timesteps: usize,
    pub train_trials: usize,
    pub validation_trials: usize,
    pub manifest: PathBuf,
}

/// Seeded data-collection trials on every training material.
pub fn cmd_collect(cfg: &RunConfig, out: &Path) -> Result<CollectSummary> {
    let lib = cfg.library()?;
    let dir = dataset_dir(out);
    let trials_dir = dir.join("trials");
    mkdir(&trials_dir)?;
    let held: BTreeSet<String> = cfg.dataset.held_out.iter().map(|h| lib.get(h).map(|m| m.name)).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for name in &cfg.dataset.materials {
        let mat = lib.get(name)?;
        if held.contains(&mat.name) {
            return Err(Error::Config(format!("training material '{}' is held out", mat.name)));
        }
        for _ in 0..cfg.dataset.trials_per_material {
            jobs.push(mat.clone());
        }
    }
    let results: Vec<(TrialRecord, TrialLog)> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, mat)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "collect-trial", id as u64));
            let top = mat.top(cfg.plant.table_z);
            let (gains, traj, excitation) = sample_trial_setup(&mut rng, &cfg.controller, top, cfg.plant.table_z, mat.center_y());
            let plant_seed = derive_seed(cfg.seed, "collect-plant", id as u64 ^ cfg.plant.rng_seed);
            let pc = PlantConfig { rng_seed: plant_seed, ..cfg.plant.clone() };
            let mut plant = Plant::new(pc, mat.clone(), Vec2::new(traj.saw_center, traj.z_start))?;
            let max_time = traj.duration + cfg.controller.tail;
            let o = run_trajectory_trial(&mut plant, &traj, &gains, &cfg.limits, max_time, cfg.controller.hold, excitation.as_ref())?;
            let rec = TrialRecord {
                id,
                file: format!("trials/trial_{id:04}.csv"),
                material: mat.name.clone(),
                plant_seed,
                gains,
                trajectory: traj,
                excitation,
                samples: o.log.len(),
                termination: o.termination,
            };
            Ok((rec, o.log))
        })
        .collect::<Result<_>>()?;
    let ids: Vec<usize> = results.iter().map(|r| r.0.id).collect();
    let split_seed = derive_seed(cfg.seed, "split", 0);
    let (train_ids, validation_ids) = split(&ids, cfg.dataset.train_fraction, split_seed)?;
    let mut train_blocks = Vec::new();
    for (rec, log) in &results {
        log.save(&dir.join(&rec.file))?;
        if train_ids.binary_search(&rec.id).is_ok() {
            train_blocks.extend(blockify(log, cfg.dataset.block_len, cfg.dataset.force_input)?);
        }
    }
    let norm_stats = fit_norm_stats(&train_blocks, "training split")?;
    let forced = results.iter().filter(|r| r.0.termination == Termination::ForceLimit).count();
    if forced > 0 {
        info!("{forced} collection trials ended at the force limit");
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        block_len: cfg.dataset.block_len,
        split_seed,
        train_fraction: cfg.dataset.train_fraction,
        validation_fraction: 1.0 - cfg.dataset.train_fraction,
        trials: results.iter().map(|r| r.0.clone()).collect(),
        train_ids,
        validation_ids,
        held_out: held.into_iter().collect(),
        force_input: cfg.dataset.force_input,
        norm_stats,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    cfg.snapshot(&dir)?;
    let summary = CollectSummary {
        trials: results.len(),
        timesteps: results.iter().map(|r| r.1.len()).sum(),
        train_trials: manifest.train_ids.len(),
        validation_trials: manifest.validation_ids.len(),
        manifest: path,
    };
    info!("collected {} trials, {} timesteps", summary.trials, summary.timesteps);
    Ok(summary)
}

/// Which stages `cmd_train` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelection {
    All,
    Only(u8),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages_run: Vec<String>,
    pub summary: Option<TrainSummary>,
    pub model: PathBuf,
}

fn load_checkpoint(out: &Path, stage: Stage, purpose: &str) -> Result<NetworkParams> {
    let path = model_path(out, stage);
    if !path.exists() {
        return Err(Error::Model(format!("{purpose} needs the {} checkpoint {}", stage.tag(), path.display())));
    }
    let (p, _) = load_model_for(&path, stage, purpose)?;
    if p.stage != stage {
        return Err(Error::Model(format!("{} holds a {} model", path.display(), p.stage.tag())));
    }
    Ok(p)
}

fn append_metrics(path: &Path, rows: &[MetricRow], fresh: bool) -> Result<()> {
    let mut existing: Vec<MetricRow> = Vec::new();
    if !fresh && path.exists() {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        for r in rdr.deserialize() {
            existing.push(r?);
        }
        let stages: BTreeSet<&str> = rows.iter().map(|r| r.stage.as_str()).collect();
        existing.retain(|r| !stages.contains(r.stage.as_str()));
    }
    existing.extend_from_slice(rows);
    let mut buf = Vec::new();
    write_metrics_csv(&existing, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Runs the training curriculum, writing one checkpoint per stage.
pub fn cmd_train(cfg: &RunConfig, out: &Path, stages: StageSelection) -> Result<TrainReport> {
    let manifest = dataset_dir(out).join("manifest.json");
    if !manifest.exists() {
        return Err(Error::Data(format!("no dataset at {}; run collect first", manifest.display())));
    }
    let ds = Dataset::load(&manifest)?;
    let data = TrainingData::from_dataset(&ds);
    let dir = model_dir(out);
    mkdir(&dir)?;
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(cfg.seed, "train", cfg.train.seed);
    tc.validate()?;
    let run = |n: u8| stages == StageSelection::All || stages == StageSelection::Only(n);
    let mut metrics = Vec::new();
    let mut stages_run = Vec::new();
    let save = |p: &NetworkParams| save_model(p, &data.norm, &model_path(out, p.stage));

    let mut net = None;
    let (mut ae, mut ss) = (None, None);
    if run(1) {
        let (p, l) = stage1_autoencoder(NetworkParams::init(tc.arch, tc.seed), &data, &tc, &mut metrics)?;
        info!("autoencoder: {l:?}");
        save(&p)?;
        stages_run.push(p.stage.tag().to_string());
        ae = Some(l);
        net = Some(p);
    }
    if run(2) {
        let start = match net.take() {
            Some(p) => p,
            None => load_checkpoint(out, Stage::Autoencoder, "single-step training")?,
        };
        let (p, l) = stage2_single_step(start, &data, &tc, &mut metrics)?;
        info!("single-step: {l:?}");
        save(&p)?;
        stages_run.push(p.stage.tag().to_string());
        ss = Some(l);
        net = Some(p);
    }
    let mut summary = None;
    if run(3) {
        let start = match net.take() {
            Some(p) => p,
            None => load_checkpoint(out, Stage::SingleStep, "multi-step training")?,
        };
        let (w, h) = (tc.warmup_blocks, tc.horizon_blocks);
        let naive = multi_step_mse(&start, &data.validation, w, h).min(multi_step_mse(&start, &data.validation, 0, h));
        let (p, l) = stage3_multi_step(start, &data, &tc, &mut metrics)?;
        info!("multi-step: {l:?}");
        save(&p)?;
        stages_run.push(p.stage.tag().to_string());
        summary = Some(TrainSummary {
            autoencoder: ae,
            single_step: ss,
            multi_step: l,
            val_single_step_mse: single_step_mse(&p, &data.validation, w),
            val_persistence_mse: persistence_mse(&data.validation, w),
            val_multi_step_mse: l.validation,
            val_naive_multi_step_mse: naive,
        });
    }
    append_metrics(&dir.join("metrics.csv"), &metrics, stages == StageSelection::All)?;
    if let Some(s) = &summary {
        write(&dir.join("summary.json"), &(serde_json::to_string_pretty(s)? + "\n"))?;
    }
    cfg.snapshot(&dir)?;
    Ok(TrainReport { stages_run, summary, model: model_path(out, Stage::MultiStep) })
}

pub fn load_predictor(out: &Path) -> Result<NetworkPredictor> {
    let path = model_path(out, Stage::MultiStep);
    if !path.exists() {
        return Err(Error::Model(format!("no trained model at {}; run train first", path.display())));
    }
    let (p, n) = load_model_for(&path, Stage::MultiStep, "MPC")?;
    NetworkPredictor::new(p, n)
}

fn context<'a>(cfg: &'a RunConfig, lib: &'a MaterialLibrary) -> Result<EvalContext<'a>> {
    let held_out = cfg.dataset.held_out.iter().map(|h| lib.get(h).map(|m| m.name)).collect::<Result<_>>()?;
    Ok(EvalContext {
        plant: &cfg.plant,
        limits: &cfg.limits,
        library: lib,
        mpc: &cfg.mpc,
        eval: &cfg.eval,
        held_out,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub material: String,
    pub completed: bool,
    pub termination: Termination,
    pub cutting_rate: f64,
    pub peak_force: f64,
    pub end_time: f64,
    pub log: PathBuf,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!(
            "material={} completed={} termination={:?} rate_mm_s={:.4} peak_force_n={:.3} time_s={:.2}",
            self.material,
            self.completed,
            self.termination,
            self.cutting_rate * 1e3,
            self.peak_force,
            self.end_time
        )
    }
}

/// One MPC deployment episode.
pub fn cmd_run(cfg: &RunConfig, out: &Path, material: &str, rep: usize) -> Result<RunSummary> {
    let lib = cfg.library()?;
    let ctx = context(cfg, &lib)?;
    let model = load_predictor(out)?;
    let ep = crate::eval::run_mpc(&ctx, &model, material, rep)?;
    let dir = out.join("run");
    mkdir(&dir)?;
    let log = dir.join(format!("deploy_{}_{}.csv", ep.result.material, ep.result.seed));
    ep.log.save(&log, true)?;
    cfg.snapshot(&dir)?;
    Ok(RunSummary {
        material: ep.result.material,
        completed: ep.result.completed,
        termination: ep.result.termination,
        cutting_rate: ep.result.cutting_rate,
        peak_force: ep.result.peak_force,
        end_time: ep.log.end_time,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: ComparisonReport,
    pub force_critical: ForceCriticalReport,
    pub invariants: InvariantCheck,
    pub dir: PathBuf,
}

/// Comparison, force-critical scenario and report. `materials` overrides
/// the configured material list.
pub fn cmd_eval(cfg: &RunConfig, out: &Path, materials: Option<&[String]>) -> Result<EvalOutput> {
    let lib = cfg.library()?;
    let ctx = context(cfg, &lib)?;
    let model = load_predictor(out)?;
    let manifest = DatasetManifest::load(&dataset_dir(out).join("manifest.json"))?;
    let trained = manifest.training_materials();
    if let Some(h) = ctx.held_out.iter().find(|h| trained.contains(*h)) {
        return Err(Error::Data(format!("held-out material '{h}' appears in the training manifest")));
    }
    let mats = materials.unwrap_or(&cfg.eval.materials);
    let report = run_comparison(&ctx, &model, mats)?;
    let (fc_ep, fc) = force_critical_scenario(&ctx, &model, 0)?;
    let amp = cfg.mpc.force_amp;
    let mut inv = report
        .episodes
        .iter()
        .filter(|e| e.result.controller == crate::eval::ControllerKind::Mpc)
        .fold(InvariantCheck::default(), |a, e| a.merge(check_mpc_invariants(&e.log, amp)));
    if let Some(e) = &fc_ep {
        inv = inv.merge(check_mpc_invariants(&e.log, amp));
    }
    let dir = out.join("report");
    emit_report(&report, fc_ep.as_ref().map(|e| (e, &fc)), &dir)?;
    write(
        &dir.join("invariants.csv"),
        &format!(
            "ticks,bound_violations,argmin_mismatches\n{},{},{}\n",
            inv.ticks, inv.bound_violations, inv.argmin_mismatches
        ),
    )?;
    cfg.snapshot(&dir)?;
    Ok(EvalOutput { report, force_critical: fc, invariants: inv, dir })
}
