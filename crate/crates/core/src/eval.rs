//! Cutting-rate comparison between the tuned fixed-trajectory baseline and
//! the MPC, and the carrot-core scenario.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::derive_seed;
use crate::controller::{run_trajectory_trial, DesiredTrajectory, Gains, Termination, TrialLimits, TrialOutcome};
use crate::mpc::{argmin, deploy_loop, DeployLog, DeploySample, MpcConfig, Predictor};
use crate::plant::{MaterialLibrary, MaterialSpec, Plant, PlantConfig};
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineGrid {
    pub k_p: Vec<f64>,
    pub k_a: Vec<f64>,
    pub saw_period: Vec<f64>,
    pub duration: Vec<f64>,
    /// Peak-to-peak sawing range (m).
    pub saw_range: f64,
    /// How far below the table the descent is commanded (m).
    pub overshoot: f64,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        BaselineGrid {
            k_p: vec![0.5, 1.0, 2.0],
            k_a: vec![0.01, 0.02, 0.03],
            saw_period: vec![0.5, 1.0, 2.0],
            duration: vec![2.0, 4.0, 8.0, 16.0],
            saw_range: 0.03,
            overshoot: 0.01,
        }
    }
}

impl BaselineGrid {
    pub fn points(&self) -> Vec<BaselinePoint> {
        let mut out = Vec::new();
        for &k_p in &self.k_p {
            for &k_a in &self.k_a {
                for &saw_period in &self.saw_period {
                    for &duration in &self.duration {
                        out.push(BaselinePoint { k_p, k_a, saw_period, duration });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub materials: Vec<String>,
    /// Paired trials per material and controller (`N`).
    pub repetitions: usize,
    pub baseline: BaselineGrid,
    pub force_critical_material: String,
    /// Window after core contact over which a stall is judged (s).
    pub stall_window: f64,
    /// Cut-front progress below which the window counts as a stall (m).
    pub stall_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            materials: ["cake", "cucumber", "zucchini", "cheese", "bell-pepper", "lemon", "potato", "carrot"]
                .map(String::from)
                .to_vec(),
            repetitions: 5,
            baseline: BaselineGrid::default(),
            force_critical_material: "carrot".into(),
            stall_window: 3.0,
            stall_threshold: 0.0005,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("eval.repetitions must be >= 1".into()));
        }
        let g = &self.baseline;
        if g.points().is_empty() {
            return Err(Error::Config("eval.baseline grid is empty".into()));
        }
        if g.k_a.iter().chain(&g.saw_period).chain(&g.duration).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("eval.baseline k_a, saw_period and duration must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub k_p: f64,
    pub k_a: f64,
    pub saw_period: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Baseline,
    Mpc,
}

impl ControllerKind {
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Baseline => "baseline",
            ControllerKind::Mpc => "mpc",
        }
    }
}

/// Shared episode setup.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub plant: &'a PlantConfig,
    pub limits: &'a TrialLimits,
    pub library: &'a MaterialLibrary,
    pub mpc: &'a MpcConfig,
    pub eval: &'a EvalConfig,
    pub held_out: BTreeSet<String>,
    pub seed: u64,
}

impl EvalContext<'_> {
    fn start(&self, mat: &MaterialSpec) -> Vec2 {
        Vec2::new(mat.center_y(), mat.top(self.plant.table_z) + self.mpc.start_clearance)
    }

    fn plant(&self, mat: &MaterialSpec, seed: u64) -> Result<Plant> {
        let cfg = PlantConfig { rng_seed: seed, ..self.plant.clone() };
        Plant::new(cfg, mat.clone(), self.start(mat))
    }

    pub fn plant_seed(&self, material: &str, rep: usize) -> u64 {
        derive_seed(self.seed, &format!("eval-plant/{material}"), rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub material: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub completed: bool,
    /// Time to complete the cut; `None` when it did not complete.
    pub cut_time: Option<f64>,
    /// Descent achieved over elapsed time (m/s).
    pub cutting_rate: f64,
    pub final_cut_front: f64,
    pub peak_force: f64,
    pub termination: Termination,
    pub log_file: String,
}

/// Depth cut per second. Unfinished trials are charged the full timeout.
pub fn cutting_rate(top: f64, final_cut_front: f64, completed_at: Option<f64>, timeout: f64) -> f64 {
    let elapsed = completed_at.unwrap_or(timeout);
    if elapsed <= 0.0 {
        return 0.0;
    }
    ((top - final_cut_front).max(0.0)) / elapsed
}

fn log_name(material: &str, c: ControllerKind, seed: u64) -> String {
    format!("trial_{material}_{}_{seed}.csv", c.label())
}

fn baseline_trajectory(ctx: &EvalContext, mat: &MaterialSpec, pt: &BaselinePoint) -> DesiredTrajectory {
    let z_start = ctx.start(mat).z;
    let g = &ctx.eval.baseline;
    DesiredTrajectory {
        z_start,
        descent_depth: z_start - (ctx.plant.table_z - g.overshoot),
        duration: pt.duration,
        saw_center: mat.center_y(),
        saw_range: g.saw_range,
        saw_period: pt.saw_period,
        f_d: Vec2::ZERO,
    }
}

/// Runs the baseline; also returns the cut front after the last step.
fn baseline_episode(ctx: &EvalContext, mat: &MaterialSpec, pt: &BaselinePoint, seed: u64) -> Result<(TrialOutcome, f64)> {
    let mut plant = ctx.plant(mat, seed)?;
    let traj = baseline_trajectory(ctx, mat, pt);
    let gains = Gains::new(Vec2::splat(pt.k_p), Vec2::splat(pt.k_a));
    let o = run_trajectory_trial(&mut plant, &traj, &gains, ctx.limits, ctx.limits.timeout, 0.0, None)?;
    Ok((o, plant.state().cut_front))
}

fn outcome_rate(ctx: &EvalContext, mat: &MaterialSpec, o: &TrialOutcome, front: f64) -> f64 {
    let top = mat.top(ctx.plant.table_z);
    let done = (o.termination == Termination::Completed).then_some(o.end_time);
    cutting_rate(top, front, done, ctx.limits.timeout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedBaseline {
    pub material: String,
    pub point: BaselinePoint,
    pub rate: f64,
    /// Rate of every grid point, in grid order.
    pub grid_rates: Vec<f64>,
}

/// Grid search for the fastest fixed-trajectory configuration. Ties go to
/// the earliest grid point.
pub fn tune_baseline(ctx: &EvalContext, material: &str) -> Result<TunedBaseline> {
    let mat = ctx.library.get(material)?;
    let seed = derive_seed(ctx.seed, &format!("tune/{}", mat.name), 0);
    let points = ctx.eval.baseline.points();
    let rates: Vec<f64> = points
        .par_iter()
        .map(|pt| {
            let (o, front) = baseline_episode(ctx, &mat, pt, seed)?;
            Ok(outcome_rate(ctx, &mat, &o, front))
        })
        .collect::<Result<_>>()?;
    let neg: Vec<f64> = rates.iter().map(|r| -r).collect();
    let best = argmin(&neg).expect("grid is non-empty");
    info!("tuned baseline for {}: {:?} at {:.3} mm/s", mat.name, points[best], rates[best] * 1e3);
    Ok(TunedBaseline { material: mat.name.clone(), point: points[best], rate: rates[best], grid_rates: rates })
}

/// A finished episode with its time series.
#[derive(Debug, Clone)]
pub struct Episode {
    pub result: TrialResult,
    pub log: DeployLog,
}

fn outcome_to_log(o: &TrialOutcome, top: f64) -> DeployLog {
    let samples = o
        .log
        .samples
        .iter()
        .zip(&o.cut_front)
        .map(|(s, &cut_front)| DeploySample {
            t: s.t,
            p: s.p,
            f_s: s.f_s,
            f_r: s.f_r,
            cut_front,
            mpc_active: false,
            f_r_star: Vec2::ZERO,
            cost: 0.0,
            tick_ms: 0.0,
        })
        .collect();
    DeployLog {
        samples,
        ticks: Vec::new(),
        termination: o.termination,
        end_time: o.end_time,
        mpc_start: f64::INFINITY,
        object_top: top,
        peak_contact_force: 0.0,
    }
}

fn peak_sensed(log: &DeployLog) -> f64 {
    log.samples.iter().map(|s| s.f_s.norm_inf()).fold(0.0, f64::max)
}

pub fn run_baseline(ctx: &EvalContext, tuned: &TunedBaseline, rep: usize) -> Result<Episode> {
    let mat = ctx.library.get(&tuned.material)?;
    let seed = ctx.plant_seed(&mat.name, rep);
    let (o, front) = baseline_episode(ctx, &mat, &tuned.point, seed)?;
    let top = mat.top(ctx.plant.table_z);
    let mut log = outcome_to_log(&o, top);
    if let Some(last) = log.samples.last_mut() {
        last.cut_front = front;
    }
    let completed = o.termination == Termination::Completed;
    let result = TrialResult {
        material: mat.name.clone(),
        controller: ControllerKind::Baseline,
        seed,
        completed,
        cut_time: completed.then_some(o.end_time),
        cutting_rate: outcome_rate(ctx, &mat, &o, front),
        final_cut_front: log.final_cut_front(),
        peak_force: peak_sensed(&log),
        termination: o.termination,
        log_file: log_name(&mat.name, ControllerKind::Baseline, seed),
    };
    Ok(Episode { result, log })
}

pub fn run_mpc<P: Predictor>(ctx: &EvalContext, model: &P, material: &str, rep: usize) -> Result<Episode> {
    let mat = ctx.library.get(material)?;
    let seed = ctx.plant_seed(&mat.name, rep);
    let mut plant = ctx.plant(&mat, seed)?;
    let cfg = MpcConfig {
        seed: derive_seed(ctx.seed, &format!("mpc/{}", mat.name), rep as u64 ^ ctx.mpc.seed),
        p_center: mat.center_y(),
        p_table: ctx.plant.table_z - ctx.mpc.table_margin,
        ..ctx.mpc.clone()
    };
    let mut log = deploy_loop(&mut plant, model, &cfg, ctx.limits)?;
    // The cut front after the last step, not before it.
    if let Some(last) = log.samples.last_mut() {
        last.cut_front = plant.state().cut_front;
    }
    let completed = log.termination == Termination::Completed;
    let top = mat.top(ctx.plant.table_z);
    let result = TrialResult {
        material: mat.name.clone(),
        controller: ControllerKind::Mpc,
        seed,
        completed,
        cut_time: completed.then_some(log.end_time),
        cutting_rate: cutting_rate(top, log.final_cut_front(), completed.then_some(log.end_time), ctx.limits.timeout),
        final_cut_front: log.final_cut_front(),
        peak_force: peak_sensed(&log),
        termination: log.termination,
        log_file: log_name(&mat.name, ControllerKind::Mpc, seed),
    };
    Ok(Episode { result, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub material: String,
    pub controller: ControllerKind,
    pub held_out: bool,
    pub n: usize,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub completed: usize,
    pub mean_peak_force: f64,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub cells: Vec<CellSummary>,
    pub tuned: Vec<TunedBaseline>,
    pub episodes: Vec<Episode>,
}

impl ComparisonReport {
    pub fn cell(&self, material: &str, c: ControllerKind) -> Option<&CellSummary> {
        self.cells.iter().find(|s| s.material == material && s.controller == c)
    }

    /// `(material, baseline mean, mpc mean, mpc strictly faster)`.
    pub fn win_loss(&self) -> Vec<(String, f64, f64, bool)> {
        let mats: Vec<&str> = self
            .cells
            .iter()
            .filter(|c| c.controller == ControllerKind::Baseline)
            .map(|c| c.material.as_str())
            .collect();
        mats.into_iter()
            .filter_map(|m| {
                let b = self.cell(m, ControllerKind::Baseline)?;
                let p = self.cell(m, ControllerKind::Mpc)?;
                Some((m.to_string(), b.mean_rate, p.mean_rate, p.mean_rate > b.mean_rate))
            })
            .collect()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Tunes the baseline per material, then runs `N` paired episodes of both
/// controllers per material.
pub fn run_comparison<P: Predictor>(ctx: &EvalContext, model: &P, materials: &[String]) -> Result<ComparisonReport> {
    let n = ctx.eval.repetitions;
    let mut canon = Vec::new();
    for m in materials {
        let name = ctx.library.get(m)?.name;
        if !canon.contains(&name) {
            canon.push(name);
        }
    }
    let tuned: Vec<TunedBaseline> = canon.iter().map(|m| tune_baseline(ctx, m)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, ControllerKind, usize)> = (0..canon.len())
        .flat_map(|i| [ControllerKind::Baseline, ControllerKind::Mpc].into_iter().flat_map(move |c| (0..n).map(move |r| (i, c, r))))
        .collect();
    let episodes: Vec<Episode> = jobs
        .par_iter()
        .map(|&(i, c, r)| match c {
            ControllerKind::Baseline => run_baseline(ctx, &tuned[i], r),
            ControllerKind::Mpc => run_mpc(ctx, model, &canon[i], r),
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for m in &canon {
        for c in [ControllerKind::Baseline, ControllerKind::Mpc] {
            let eps: Vec<&Episode> = episodes.iter().filter(|e| &e.result.material == m && e.result.controller == c).collect();
            if eps.len() != n {
                return Err(Error::Simulation(format!("{m}/{}: expected {n} results, got {}", c.label(), eps.len())));
            }
            let rates: Vec<f64> = eps.iter().map(|e| e.result.cutting_rate).collect();
            let (mean_rate, std_rate) = mean_std(&rates);
            let peaks: Vec<f64> = eps.iter().map(|e| e.result.peak_force).collect();
            cells.push(CellSummary {
                material: m.clone(),
                controller: c,
                held_out: ctx.held_out.contains(m),
                n,
                mean_rate,
                std_rate,
                completed: eps.iter().filter(|e| e.result.completed).count(),
                mean_peak_force: mean_std(&peaks).0,
            });
        }
    }
    Ok(ComparisonReport { cells, tuned, episodes })
}

/// Exact checks on the MPC's own records.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub ticks: usize,
    pub bound_violations: usize,
    pub argmin_mismatches: usize,
}

impl InvariantCheck {
    pub fn ok(&self) -> bool {
        self.bound_violations == 0 && self.argmin_mismatches == 0
    }

    pub fn merge(mut self, o: InvariantCheck) -> Self {
        self.ticks += o.ticks;
        self.bound_violations += o.bound_violations;
        self.argmin_mismatches += o.argmin_mismatches;
        self
    }
}

pub fn check_mpc_invariants(log: &DeployLog, force_amp: f64) -> InvariantCheck {
    let mut c = InvariantCheck { ticks: log.ticks.len(), ..Default::default() };
    for t in &log.ticks {
        let chosen_cost = t.costs[t.chosen];
        let is_min = t.costs.iter().all(|x| chosen_cost <= *x)
            && t.costs[..t.chosen].iter().all(|x| chosen_cost < *x);
        if !is_min || t.winner.force != t.candidates[t.chosen] || t.winner.cost != chosen_cost {
            c.argmin_mismatches += 1;
        }
        if t.candidates.iter().any(|f| f.norm_inf() > force_amp) {
            c.bound_violations += 1;
        }
    }
    c.bound_violations += log
        .samples
        .iter()
        .filter(|s| s.mpc_active && (s.f_r_star.norm_inf() > force_amp || s.f_r.norm_inf() > force_amp))
        .count();
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceCriticalReport {
    pub material: String,
    /// Top of the uncuttable band (m).
    pub band_top: f64,
    pub deepest_cut_front: f64,
    pub band_respected: bool,
    pub fault: Option<String>,
    pub termination: Option<Termination>,
    /// First time the cut front reached the band.
    pub core_contact_time: Option<f64>,
    pub stalled: bool,
    pub stall_progress: Option<f64>,
    pub pre_mean_fz: f64,
    pub post_mean_fz: f64,
    pub pre_mean_abs_fy: f64,
    pub post_mean_abs_fy: f64,
    /// Mean reference force after the stall does not press into the material.
    pub releasing: bool,
    /// Mean lateral reference magnitude after the stall exceeds the pre-stall mean.
    pub lateral_intensified: bool,
}

impl ForceCriticalReport {
    pub fn retreat_fired(&self) -> bool {
        self.releasing || self.lateral_intensified
    }

    pub fn passed(&self) -> bool {
        self.band_respected && self.fault.is_none() && self.termination != Some(Termination::ForceLimit) && self.retreat_fired()
    }
}

/// Indicators from an MPC log on a material with an uncuttable band.
pub fn analyse_force_critical(log: &DeployLog, band_top: f64, eval: &EvalConfig, material: &str) -> ForceCriticalReport {
    let deepest = log.samples.iter().map(|s| s.cut_front).fold(log.object_top, f64::min);
    let contact = log.samples.iter().find(|s| s.cut_front <= band_top + 1e-4).map(|s| s.t);
    let (mut stalled, mut progress) = (false, None);
    if let Some(tc) = contact {
        let at = |t: f64| log.samples.iter().take_while(|s| s.t <= t + 1e-9).last().map(|s| s.cut_front);
        let end = tc + eval.stall_window;
        if log.samples.last().is_some_and(|s| s.t + 1e-9 >= end) {
            let d = at(tc).unwrap_or(log.object_top) - at(end).unwrap_or(log.object_top);
            progress = Some(d);
            stalled = d < eval.stall_threshold;
        }
    }
    let active: Vec<&DeploySample> = log.samples.iter().filter(|s| s.mpc_active).collect();
    let split = contact.unwrap_or(f64::INFINITY);
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let pre: Vec<&&DeploySample> = active.iter().filter(|s| s.t < split).collect();
    let post: Vec<&&DeploySample> = active.iter().filter(|s| s.t >= split).collect();
    let pre_fz = mean(pre.iter().map(|s| s.f_r_star.z).collect());
    let post_fz = mean(post.iter().map(|s| s.f_r_star.z).collect());
    let pre_fy = mean(pre.iter().map(|s| s.f_r_star.y.abs()).collect());
    let post_fy = mean(post.iter().map(|s| s.f_r_star.y.abs()).collect());
    let has_windows = stalled && !post.is_empty();
    ForceCriticalReport {
        material: material.to_string(),
        band_top,
        deepest_cut_front: deepest,
        band_respected: deepest >= band_top - 1e-12,
        fault: None,
        termination: Some(log.termination),
        core_contact_time: contact,
        stalled,
        stall_progress: progress,
        pre_mean_fz: pre_fz,
        post_mean_fz: post_fz,
        pre_mean_abs_fy: pre_fy,
        post_mean_abs_fy: post_fy,
        releasing: has_windows && post_fz <= 0.0,
        lateral_intensified: has_windows && !pre.is_empty() && post_fy > pre_fy,
    }
}

/// Runs one MPC episode on the force-critical material and evaluates the
/// retreat indicators. Faults are reported, not raised.
pub fn force_critical_scenario<P: Predictor>(ctx: &EvalContext, model: &P, rep: usize) -> Result<(Option<Episode>, ForceCriticalReport)> {
    let name = &ctx.eval.force_critical_material;
    let mat = ctx.library.get(name)?;
    let (lo, _) = mat
        .uncuttable_band()
        .ok_or_else(|| Error::Config(format!("material '{name}' has no uncuttable band")))?;
    let band_top = mat.top(ctx.plant.table_z) - lo * mat.height;
    match run_mpc(ctx, model, name, rep) {
        Ok(ep) => {
            let r = analyse_force_critical(&ep.log, band_top, ctx.eval, &mat.name);
            Ok((Some(ep), r))
        }
        Err(e) => {
            let r = ForceCriticalReport {
                material: mat.name.clone(),
                band_top,
                deepest_cut_front: f64::NAN,
                band_respected: false,
                fault: Some(e.to_string()),
                termination: None,
                core_contact_time: None,
                stalled: false,
                stall_progress: None,
                pre_mean_fz: f64::NAN,
                post_mean_fz: f64::NAN,
                pre_mean_abs_fy: f64::NAN,
                post_mean_abs_fy: f64::NAN,
                releasing: false,
                lateral_intensified: false,
            };
            Ok((None, r))
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn rates_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("material,controller,held_out,n,mean_rate_m_per_s,std_rate_m_per_s,completed,mean_peak_force_n\n");
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.8},{:.8},{},{}",
            c.material,
            c.controller.label(),
            c.held_out,
            c.n,
            c.mean_rate,
            c.std_rate,
            c.completed,
            fmt(c.mean_peak_force)
        );
    }
    s
}

pub fn trials_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("material,controller,seed,completed,cut_time_s,cutting_rate_m_per_s,final_cut_front_m,peak_force_n,termination,log\n");
    for e in &report.episodes {
        let r = &e.result;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.8},{},{},{:?},{}",
            r.material,
            r.controller.label(),
            r.seed,
            r.completed,
            opt(r.cut_time),
            r.cutting_rate,
            fmt(r.final_cut_front),
            fmt(r.peak_force),
            r.termination,
            r.log_file
        );
    }
    s
}

pub fn win_loss_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("material,baseline_mean_rate,mpc_mean_rate,winner\n");
    for (m, b, p, win) in report.win_loss() {
        let _ = writeln!(s, "{m},{b:.8},{p:.8},{}", if win { "mpc" } else { "baseline" });
    }
    s
}

pub fn tuned_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("material,k_p,k_a,saw_period_s,duration_s,tuning_rate_m_per_s\n");
    for t in &report.tuned {
        let p = &t.point;
        let _ = writeln!(s, "{},{},{},{},{},{:.8}", t.material, p.k_p, p.k_a, p.saw_period, p.duration, t.rate);
    }
    s
}

pub fn force_critical_csv(r: &ForceCriticalReport) -> String {
    let mut s = String::from("quantity,value\n");
    let rows: Vec<(&str, String)> = vec![
        ("material", r.material.clone()),
        ("band_top_m", fmt(r.band_top)),
        ("deepest_cut_front_m", fmt(r.deepest_cut_front)),
        ("band_respected", r.band_respected.to_string()),
        ("fault", r.fault.clone().unwrap_or_default()),
        ("termination", r.termination.map(|t| format!("{t:?}")).unwrap_or_default()),
        ("core_contact_time_s", opt(r.core_contact_time)),
        ("stalled", r.stalled.to_string()),
        ("stall_progress_m", opt(r.stall_progress)),
        ("pre_stall_mean_frstar_z_n", fmt(r.pre_mean_fz)),
        ("post_stall_mean_frstar_z_n", fmt(r.post_mean_fz)),
        ("pre_stall_mean_abs_frstar_y_n", fmt(r.pre_mean_abs_fy)),
        ("post_stall_mean_abs_frstar_y_n", fmt(r.post_mean_abs_fy)),
        ("releasing", r.releasing.to_string()),
        ("lateral_intensified", r.lateral_intensified.to_string()),
        ("retreat_fired", r.retreat_fired().to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart of mean cutting rate per material.
pub fn rates_svg(report: &ComparisonReport) -> String {
    let (w, h, left, bottom, top) = (760.0, 360.0, 60.0, 300.0, 30.0);
    let wl = report.win_loss();
    let max = wl.iter().map(|(_, b, p, _)| b.max(*p)).fold(1e-9, f64::max) * 1e3;
    let group = (w - left - 20.0) / wl.len().max(1) as f64;
    let bar = group * 0.35;
    let y = |v: f64| bottom - (v * 1e3 / max) * (bottom - top);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-family="sans-serif" font-size="13">Mean cutting rate (mm/s)</text>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, w - 20.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let yy = y(v / 1e3);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"#, left - 4.0, yy + 3.0);
    }
    for (i, (m, b, p, _)) in wl.iter().enumerate() {
        let x0 = left + 10.0 + group * i as f64;
        for (j, (v, color)) in [(*b, "#8c8c8c"), (*p, "#1f77b4")].iter().enumerate() {
            let x = x0 + j as f64 * bar;
            let yy = y(*v);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{yy:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"/>"#,
                bottom - yy
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            x0 + bar,
            bottom + 14.0,
            xml_escape(m)
        );
    }
    let _ = writeln!(s, r##"<rect x="{}" y="36" width="10" height="10" fill="#8c8c8c"/><text x="{}" y="45" font-family="sans-serif" font-size="10">baseline</text>"##, w - 140.0, w - 126.0);
    let _ = writeln!(s, r##"<rect x="{}" y="52" width="10" height="10" fill="#1f77b4"/><text x="{}" y="61" font-family="sans-serif" font-size="10">mpc</text>"##, w - 140.0, w - 126.0);
    s.push_str("</svg>\n");
    s
}

/// Knife height, cut front and chosen reference forces over time.
pub fn force_critical_svg(log: &DeployLog, r: &ForceCriticalReport) -> String {
    let (w, ph) = (760.0, 200.0);
    let h = 2.0 * ph + 70.0;
    let t_end = log.samples.last().map_or(1.0, |s| s.t).max(1e-6);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let panel = |s: &mut String, y0: f64, title: &str, series: &[(&str, Vec<(f64, f64)>)], lo: f64, hi: f64| {
        let (left, right) = (60.0, w - 20.0);
        let sx = |t: f64| left + (t / t_end) * (right - left);
        let span = (hi - lo).max(1e-12);
        let sy = |v: f64| y0 + ph - ((v - lo) / span) * (ph - 20.0);
        let _ = writeln!(s, r#"<text x="{left}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, y0 + 12.0, xml_escape(title));
        let _ = writeln!(s, r#"<rect x="{left}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#, y0 + 20.0, right - left, ph - 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{hi:.3}</text>"#, left - 4.0, y0 + 24.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{lo:.3}</text>"#, left - 4.0, y0 + ph);
        for (k, (name, pts)) in series.iter().enumerate() {
            let color = ["#1f77b4", "#d62728", "#2ca02c"][k % 3];
            let mut d = String::new();
            for (i, (t, v)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, sx(*t), sy(*v));
            }
            let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"#);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#,
                right - 150.0,
                y0 + 34.0 + 12.0 * k as f64,
                xml_escape(name)
            );
        }
    };
    let pos = |f: fn(&DeploySample) -> f64| log.samples.iter().map(|x| (x.t, f(x))).collect::<Vec<_>>();
    let zs = pos(|x| x.p.z * 1e3);
    let fronts = pos(|x| x.cut_front * 1e3);
    let band = vec![(0.0, r.band_top * 1e3), (t_end, r.band_top * 1e3)];
    let all = zs.iter().chain(&fronts).chain(&band).map(|p| p.1);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    panel(&mut s, 0.0, "Knife height, cut front and core top (mm)", &[("knife z", zs), ("cut front", fronts), ("core top", band)], lo, hi);
    let fz = pos(|x| x.f_r_star.z);
    let fy = pos(|x| x.f_r_star.y);
    panel(&mut s, ph + 40.0, "Chosen reference force (N)", &[("F_r* z", fz), ("F_r* y", fy)], -8.0, 8.0);
    s.push_str("</svg>\n");
    s
}

/// Writes the report directory.
pub fn emit_report(report: &ComparisonReport, fc: Option<(&Episode, &ForceCriticalReport)>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("rates.csv", &rates_csv(report))?;
    write("trials.csv", &trials_csv(report))?;
    write("win_loss.csv", &win_loss_csv(report))?;
    write("baseline_tuning.csv", &tuned_csv(report))?;
    write("rates.svg", &rates_svg(report))?;
    for e in &report.episodes {
        e.log.save(&dir.join(&e.result.log_file), false)?;
    }
    if let Some((ep, r)) = fc {
        write("force_critical.csv", &force_critical_csv(r))?;
        write("force_critical.svg", &force_critical_svg(&ep.log, r))?;
        ep.log.save(&dir.join(format!("force_critical_{}_{}.csv", r.material, ep.result.seed)), false)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_definition() {
        assert_eq!(cutting_rate(0.05, 0.0, Some(10.0), 60.0), 0.005);
        assert_eq!(cutting_rate(0.04, 0.01, None, 60.0), 0.03 / 60.0);
        assert_eq!(cutting_rate(0.04, 0.05, None, 60.0), 0.0);
    }

    #[test]
    fn grid_enumerates_all_points() {
        let g = BaselineGrid::default();
        assert_eq!(g.points().len(), 3 * 3 * 3 * 4);
    }

    #[test]
    fn invariant_check_flags_a_wrong_argmin() {
        use crate::mpc::{Candidate, CostBreakdown, TickDiagnostics};
        let tick = |chosen: usize| TickDiagnostics {
            candidates: vec![Vec2::new(1.0, 1.0), Vec2::new(2.0, -9.0)],
            costs: vec![1.0, 2.0],
            chosen,
            winner: Candidate { force: [Vec2::new(1.0, 1.0), Vec2::new(2.0, -9.0)][chosen], predicted: vec![], cost: [1.0, 2.0][chosen], breakdown: CostBreakdown::default() },
            wall_clock_ms: 0.0,
        };
        let log = |t| DeployLog {
            samples: vec![],
            ticks: vec![t],
            termination: Termination::Timeout,
            end_time: 0.0,
            mpc_start: 0.0,
            object_top: 0.0,
            peak_contact_force: 0.0,
        };
        let ok = check_mpc_invariants(&log(tick(0)), 10.0);
        assert!(ok.ok());
        let bad = check_mpc_invariants(&log(tick(1)), 8.0);
        assert_eq!((bad.argmin_mismatches, bad.bound_violations), (1, 1));
    }
}
