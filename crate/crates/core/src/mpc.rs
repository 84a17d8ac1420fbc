//! Random-shooting receding-horizon control on a learned block model.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{error, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{closed_loop_step, control_law, DesiredTrajectory, Gains, Termination, TrialLimits, TrialLog};
use crate::dataset::{state_block, NormStats, POS_CHANNELS};
use crate::dynmodel::{LatentState, NetworkParams, Stage};
use crate::plant::Plant;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Candidates per tick (`K`).
    pub candidates: usize,
    pub horizon_blocks: usize,
    /// Componentwise bound of the sampled reference forces (N).
    pub force_amp: f64,
    pub c_cut: f64,
    pub c_saw: f64,
    pub c_v: f64,
    pub p_table: f64,
    pub p_center: f64,
    /// In deployment the cut target is placed this far below the table, so
    /// that pressing on stays worthwhile with the edge close to it (m).
    pub table_margin: f64,
    /// Hz.
    pub control_rate: f64,
    pub seed: u64,
    /// Compliance applied around the chosen reference force.
    pub k_a: f64,
    /// Contact initialisation with the data-collection controller.
    pub init_duration: f64,
    pub init_depth: f64,
    pub init_k_p: f64,
    /// Starting height above the object's top (m).
    pub start_clearance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            candidates: 128,
            horizon_blocks: 5,
            force_amp: 8.0,
            c_cut: 50.0,
            c_saw: 5.0,
            c_v: 1e-6,
            p_table: 0.0,
            p_center: 0.0,
            table_margin: 0.02,
            control_rate: 10.0,
            seed: 0,
            k_a: 0.02,
            init_duration: 1.5,
            init_depth: 0.008,
            init_k_p: 1.0,
            start_clearance: 0.003,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mpc: {m}")));
        if self.candidates == 0 || self.horizon_blocks == 0 {
            return bad("candidates and horizon_blocks must be >= 1");
        }
        if !(self.force_amp > 0.0) {
            return bad("force_amp must be > 0");
        }
        if [self.c_cut, self.c_saw, self.c_v, self.table_margin].iter().any(|w| !(*w >= 0.0)) {
            return bad("cost weights and table_margin must be >= 0");
        }
        if !(self.control_rate > 0.0) || !(self.k_a > 0.0) || self.init_duration < 0.0 {
            return bad("control_rate and k_a must be > 0, init_duration >= 0");
        }
        Ok(())
    }
}

/// Draws `K` reference forces uniformly on the square `[-amp, amp]^2`.
pub fn sample_candidates<R: Rng>(k: usize, amp: f64, rng: &mut R) -> Vec<Vec2> {
    (0..k)
        .map(|_| {
            let y = rng.random_range(-amp..=amp);
            let z = rng.random_range(-amp..=amp);
            Vec2::new(y, z)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub cut: f64,
    pub terminal: f64,
    pub saw: f64,
    pub input: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.cut + self.terminal + self.saw + self.input
    }
}

/// Cost of a predicted trajectory of absolute positions, one entry per
/// timestep, under a force held constant over the horizon.
pub fn horizon_cost(positions: &[Vec2], force: Vec2, cfg: &MpcConfig) -> CostBreakdown {
    let mut b = CostBreakdown::default();
    for p in positions {
        b.cut += (p.z - cfg.p_table).powi(2);
        b.saw += (p.y - cfg.p_center).powi(2);
    }
    b.cut *= cfg.c_cut;
    b.saw *= cfg.c_saw;
    b.terminal = positions.last().map_or(0.0, |p| p.z);
    b.input = cfg.c_v * positions.len() as f64 * force.norm_sq();
    b
}

/// The most recent complete block of measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredBlock {
    pub positions: Vec<Vec2>,
    pub forces: Vec<Vec2>,
    /// Last position of the preceding block (first sample for the first block).
    pub anchor: Vec2,
}

impl MeasuredBlock {
    pub fn from_log(log: &TrialLog, end: usize, m: usize) -> Result<Self> {
        if end < m || end > log.len() {
            return Err(Error::Model(format!("need {m} measured samples, have {}", end.min(log.len()))));
        }
        let s = &log.samples[end - m..end];
        let anchor = if end > m { log.samples[end - m - 1].p } else { s[0].p };
        Ok(MeasuredBlock {
            positions: s.iter().map(|x| x.p).collect(),
            forces: s.iter().map(|x| x.f_s).collect(),
            anchor,
        })
    }

    pub fn last_position(&self) -> Vec2 {
        *self.positions.last().expect("non-empty block")
    }
}

/// Anything that predicts absolute positions over a horizon of blocks under
/// a constant reference force.
pub trait Predictor: Sync {
    type Latent: Clone + Send + Sync;

    fn block_len(&self) -> usize;
    fn initial_latent(&self) -> Self::Latent;
    /// Latent state after consuming `block`.
    fn advance(&self, block: &MeasuredBlock, latent: &Self::Latent) -> Result<Self::Latent>;
    /// `horizon * block_len` absolute positions following `block`.
    fn predict(&self, block: &MeasuredBlock, latent: &Self::Latent, force: Vec2, horizon: usize) -> Result<Vec<Vec2>>;
}

/// The trained network with its normalisation.
#[derive(Debug, Clone)]
pub struct NetworkPredictor {
    pub params: NetworkParams,
    pub norm: NormStats,
}

impl NetworkPredictor {
    pub fn new(params: NetworkParams, norm: NormStats) -> Result<Self> {
        if params.stage != Stage::MultiStep {
            return Err(Error::Model(format!(
                "MPC needs a multi_step model, got {}",
                params.stage.tag()
            )));
        }
        if norm.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Model("normalisation statistics have a non-positive std".into()));
        }
        Ok(NetworkPredictor { params, norm })
    }

    fn input(&self, block: &MeasuredBlock) -> Result<Vec<f64>> {
        let m = self.params.arch.block_len;
        if block.positions.len() != m || block.forces.len() != m {
            return Err(Error::Model(format!("measured block has {} samples, model expects {m}", block.positions.len())));
        }
        let mut x = state_block(&block.positions, &block.forces, block.anchor);
        self.norm.normalize_state(&mut x);
        Ok(x)
    }
}

impl Predictor for NetworkPredictor {
    type Latent = LatentState;

    fn block_len(&self) -> usize {
        self.params.arch.block_len
    }

    fn initial_latent(&self) -> LatentState {
        self.params.initial_latent()
    }

    fn advance(&self, block: &MeasuredBlock, latent: &LatentState) -> Result<LatentState> {
        let x = self.input(block)?;
        self.params.check_inputs(&x, &vec![0.0; POS_CHANNELS * self.block_len()], latent)?;
        Ok(self.params.advance_latent(&x, latent))
    }

    fn predict(&self, block: &MeasuredBlock, latent: &LatentState, force: Vec2, horizon: usize) -> Result<Vec<Vec2>> {
        let x = self.input(block)?;
        let f = self.norm.normalize_force(force);
        let v: Vec<f64> = (0..self.block_len()).flat_map(|_| [f.y, f.z]).collect();
        let rel = self.params.rollout(&x, &vec![v; horizon], latent)?;
        let mut anchor = block.last_position();
        let mut out = Vec::with_capacity(horizon * self.block_len());
        for mut r in rel {
            self.norm.denormalize_positions(&mut r);
            for d in r.chunks_exact(POS_CHANNELS) {
                out.push(anchor + Vec2::new(d[0], d[1]));
            }
            anchor = *out.last().expect("non-empty block");
        }
        Ok(out)
    }
}

/// Constant-rate mock: each timestep moves by `gain * F` from the last
/// measured position.
#[derive(Debug, Clone, Copy)]
pub struct LinearMock {
    pub gain: Vec2,
    pub block_len: usize,
}

impl Predictor for LinearMock {
    type Latent = ();

    fn block_len(&self) -> usize {
        self.block_len
    }

    fn initial_latent(&self) {}

    fn advance(&self, _: &MeasuredBlock, _: &()) -> Result<()> {
        Ok(())
    }

    fn predict(&self, block: &MeasuredBlock, _: &(), force: Vec2, horizon: usize) -> Result<Vec<Vec2>> {
        let p0 = block.last_position();
        let step = self.gain.hadamard(force);
        Ok((1..=horizon * self.block_len).map(|k| p0 + step * k as f64).collect())
    }
}

impl LinearMock {
    /// Minimiser of [`horizon_cost`] over constant forces in the box, per axis.
    pub fn optimal_force(&self, from: Vec2, cfg: &MpcConfig) -> Vec2 {
        let n = (cfg.horizon_blocks * self.block_len) as f64;
        let sk = n * (n + 1.0) / 2.0;
        let sk2 = n * (n + 1.0) * (2.0 * n + 1.0) / 6.0;
        let axis = |g: f64, a: f64, w: f64, lin: f64| {
            let den = 2.0 * w * g * g * sk2 + 2.0 * cfg.c_v * n;
            let num = -(2.0 * w * g * a * sk + lin * g);
            if den > 0.0 {
                (num / den).clamp(-cfg.force_amp, cfg.force_amp)
            } else if num > 0.0 {
                cfg.force_amp
            } else {
                -cfg.force_amp
            }
        };
        Vec2::new(
            axis(self.gain.y, from.y - cfg.p_center, cfg.c_saw, 0.0),
            axis(self.gain.z, from.z - cfg.p_table, cfg.c_cut, n),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub force: Vec2,
    pub predicted: Vec<Vec2>,
    pub cost: f64,
    pub breakdown: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickDiagnostics {
    pub candidates: Vec<Vec2>,
    pub costs: Vec<f64>,
    pub chosen: usize,
    pub winner: Candidate,
    pub wall_clock_ms: f64,
}

/// Index of the smallest cost; the first one on ties.
pub fn argmin(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in costs.iter().enumerate() {
        if best.is_none_or(|b| *c < costs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores the given candidates and returns the winner and the latent state
/// advanced on `block`.
pub fn mpc_step_with<P: Predictor>(
    model: &P,
    block: &MeasuredBlock,
    latent: &P::Latent,
    candidates: Vec<Vec2>,
    cfg: &MpcConfig,
) -> Result<(Vec2, TickDiagnostics, P::Latent)> {
    let start = Instant::now();
    if candidates.is_empty() {
        return Err(Error::Config("mpc: no candidates".into()));
    }
    let scored: Vec<(Vec<Vec2>, CostBreakdown)> = candidates
        .par_iter()
        .map(|f| {
            let pred = model.predict(block, latent, *f, cfg.horizon_blocks)?;
            let b = horizon_cost(&pred, *f, cfg);
            Ok((pred, b))
        })
        .collect::<Result<_>>()?;
    let costs: Vec<f64> = scored.iter().map(|(_, b)| b.total()).collect();
    if costs.iter().any(|c| c.is_nan()) {
        return Err(Error::Model("model prediction produced a NaN cost".into()));
    }
    let chosen = argmin(&costs).expect("non-empty");
    let next = model.advance(block, latent)?;
    let (predicted, breakdown) = scored.into_iter().nth(chosen).expect("index in range");
    let force = candidates[chosen];
    let winner = Candidate { force, predicted, cost: costs[chosen], breakdown };
    let wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((force, TickDiagnostics { candidates, costs, chosen, winner, wall_clock_ms }, next))
}

/// One tick: sample `K` forces, score them, return the best.
pub fn mpc_step<P: Predictor, R: Rng>(
    model: &P,
    block: &MeasuredBlock,
    latent: &P::Latent,
    cfg: &MpcConfig,
    rng: &mut R,
) -> Result<(Vec2, TickDiagnostics, P::Latent)> {
    let c = sample_candidates(cfg.candidates, cfg.force_amp, rng);
    mpc_step_with(model, block, latent, c, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploySample {
    pub t: f64,
    pub p: Vec2,
    pub f_s: Vec2,
    /// Reference force tracked at this step.
    pub f_r: Vec2,
    pub cut_front: f64,
    pub mpc_active: bool,
    /// Latest MPC choice and its cost (zero before the first tick).
    pub f_r_star: Vec2,
    pub cost: f64,
    pub tick_ms: f64,
}

pub const DEPLOY_CSV_COLUMNS: [&str; 12] =
    ["t", "p_y", "p_z", "F_s_y", "F_s_z", "F_r_y", "F_r_z", "cut_front", "mpc_active", "F_rstar_y", "F_rstar_z", "cost"];

#[derive(Debug, Clone)]
pub struct DeployLog {
    pub samples: Vec<DeploySample>,
    pub ticks: Vec<TickDiagnostics>,
    pub termination: Termination,
    /// Completion time, or the time of the last sample.
    pub end_time: f64,
    /// Start of the MPC phase.
    pub mpc_start: f64,
    /// Object top at the start.
    pub object_top: f64,
    pub peak_contact_force: f64,
}

impl DeployLog {
    /// Writes the deployment CSV; `wall_clock` adds the per-tick compute time.
    pub fn write_csv<W: Write>(&self, w: W, wall_clock: bool) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = DEPLOY_CSV_COLUMNS.to_vec();
        if wall_clock {
            header.push("tick_ms");
        }
        csv.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = [s.t, s.p.y, s.p.z, s.f_s.y, s.f_s.z, s.f_r.y, s.f_r.z, s.cut_front]
                .iter()
                .map(|v| v.to_string())
                .collect();
            row.push(u8::from(s.mpc_active).to_string());
            row.extend([s.f_r_star.y, s.f_r_star.z, s.cost].iter().map(|v| v.to_string()));
            if wall_clock {
                row.push(s.tick_ms.to_string());
            }
            csv.write_record(&row)?;
        }
        csv.flush().map_err(|e| Error::io("<deploy csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path, wall_clock: bool) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, wall_clock)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn to_trial_log(&self) -> TrialLog {
        TrialLog {
            samples: self
                .samples
                .iter()
                .map(|s| crate::controller::Sample { t: s.t, p: s.p, f_s: s.f_s, f_r: s.f_r })
                .collect(),
        }
    }

    pub fn final_cut_front(&self) -> f64 {
        self.samples.last().map_or(self.object_top, |s| s.cut_front)
    }
}

/// Contact initialisation followed by MPC ticks. The plant should start at
/// rest above the object.
pub fn deploy_loop<P: Predictor>(
    plant: &mut Plant,
    model: &P,
    cfg: &MpcConfig,
    limits: &TrialLimits,
) -> Result<DeployLog> {
    cfg.validate()?;
    let dt = plant.cfg.dt;
    let m = model.block_len();
    let steps_per_tick = (1.0 / (cfg.control_rate * dt)).round() as usize;
    if steps_per_tick != m {
        return Err(Error::Config(format!(
            "mpc: control period of {steps_per_tick} plant steps must equal the model block length {m}"
        )));
    }
    let init_steps = ((cfg.init_duration / dt).round() as usize).div_ceil(m).max(1) * m;
    let total_steps = (limits.timeout / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = plant.state().p;
    let init_traj = DesiredTrajectory {
        z_start: start.z,
        descent_depth: cfg.init_depth,
        duration: cfg.init_duration.max(dt),
        saw_center: cfg.p_center,
        saw_range: 0.0,
        saw_period: 1.0,
        f_d: Vec2::ZERO,
    };
    let init_gains = Gains::new(Vec2::splat(cfg.init_k_p), Vec2::splat(cfg.k_a));
    let k_a = Vec2::splat(cfg.k_a);
    let mpc_gains = Gains::new(Vec2::ZERO, k_a);

    let object_top = plant.object_top();
    let mut trial = TrialLog::default();
    let mut out = DeployLog {
        samples: Vec::with_capacity(total_steps),
        ticks: Vec::new(),
        termination: Termination::Timeout,
        end_time: 0.0,
        mpc_start: init_steps as f64 * dt,
        object_top,
        peak_contact_force: 0.0,
    };
    let mut latent = model.initial_latent();
    let mut f_star = Vec2::ZERO;
    let mut cost = 0.0;
    let mut tick_ms = 0.0;
    for i in 0..total_steps {
        let t = i as f64 * dt;
        if i > 0 && i % m == 0 {
            let block = MeasuredBlock::from_log(&trial, i, m)?;
            if i >= init_steps {
                let (f, diag, next) = mpc_step(model, &block, &latent, cfg, &mut rng).inspect_err(|e| {
                    error!("mpc tick at t={t:.2} failed: {e}");
                })?;
                f_star = f;
                cost = diag.cost();
                tick_ms = diag.wall_clock_ms;
                out.ticks.push(diag);
                latent = next;
            } else {
                latent = model.advance(&block, &latent)?;
            }
        }
        let cut_front = plant.state().cut_front;
        let active = i >= init_steps;
        let stepped = if active {
            let p = plant.state().p;
            let f_s = plant.sensed_force();
            trial.samples.push(crate::controller::Sample { t, p, f_s, f_r: f_star });
            plant.step(control_law(f_s, f_star, &mpc_gains)).map(|_| ())
        } else {
            closed_loop_step(plant, &init_traj, &init_gains, t, &mut trial).map(|_| ())
        };
        if let Err(e) = stepped {
            error!("plant fault at t={t:.2}: {e}");
            return Err(e);
        }
        let s = trial.samples.last().expect("sample logged");
        out.samples.push(DeploySample {
            t,
            p: s.p,
            f_s: s.f_s,
            f_r: s.f_r,
            cut_front,
            mpc_active: active,
            f_r_star: f_star,
            cost,
            tick_ms,
        });
        out.end_time = t + dt;
        let contact = plant.contact_force().norm_inf();
        out.peak_contact_force = out.peak_contact_force.max(contact);
        if contact > limits.force_limit {
            out.termination = Termination::ForceLimit;
            break;
        }
        if plant.is_cut_through(limits.cut_tolerance) {
            out.termination = Termination::Completed;
            break;
        }
    }
    info!(
        "deploy finished: {:?} at t={:.2}s after {} ticks, cut front {:.4}",
        out.termination,
        out.end_time,
        out.ticks.len(),
        plant.state().cut_front
    );
    Ok(out)
}

impl TickDiagnostics {
    pub fn cost(&self) -> f64 {
        self.winner.cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(p: Vec2, m: usize) -> MeasuredBlock {
        MeasuredBlock { positions: vec![p; m], forces: vec![Vec2::ZERO; m], anchor: p }
    }

    #[test]
    fn candidates_are_bounded_and_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let ca = sample_candidates(1000, 8.0, &mut a);
        assert_eq!(ca, sample_candidates(1000, 8.0, &mut b));
        assert!(ca.iter().all(|f| f.norm_inf() <= 8.0));
    }

    #[test]
    fn candidate_mean_is_near_zero() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let c = sample_candidates(100_000, 8.0, &mut r);
        let mean = c.iter().fold(Vec2::ZERO, |a, f| a + *f) * (1.0 / c.len() as f64);
        assert!(mean.y.abs() < 0.1 && mean.z.abs() < 0.1, "{mean:?}");
    }

    #[test]
    fn cost_at_target_is_terminal_only() {
        let cfg = MpcConfig { p_table: 0.02, p_center: -0.01, ..MpcConfig::default() };
        let pts = vec![Vec2::new(-0.01, 0.02); 50];
        let b = horizon_cost(&pts, Vec2::ZERO, &cfg);
        assert_eq!(b.total(), 0.02);
        let zero = MpcConfig { c_cut: 0.0, c_saw: 0.0, c_v: 0.0, ..cfg };
        let pts = vec![Vec2::new(0.3, 0.1), Vec2::new(0.2, 0.07)];
        assert_eq!(horizon_cost(&pts, Vec2::splat(3.0), &zero).total(), 0.07);
    }

    #[test]
    fn single_candidate_and_ties() {
        let mock = LinearMock { gain: Vec2::splat(1e-4), block_len: 2 };
        let cfg = MpcConfig { horizon_blocks: 2, ..MpcConfig::default() };
        let b = block(Vec2::new(0.0, 0.03), 2);
        let (f, d, _) = mpc_step_with(&mock, &b, &(), vec![Vec2::new(8.0, 8.0)], &cfg).unwrap();
        assert_eq!((f, d.chosen), (Vec2::new(8.0, 8.0), 0));
        let c = vec![Vec2::new(1.0, 1.0), Vec2::new(0.0, -2.0), Vec2::new(0.0, -2.0)];
        let (_, d, _) = mpc_step_with(&mock, &b, &(), c, &cfg).unwrap();
        assert_eq!(d.chosen, 1);
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 3.0]), Some(1));
    }

    #[test]
    fn mock_optimum_is_a_stationary_point() {
        let mock = LinearMock { gain: Vec2::new(2e-5, 3e-5), block_len: 10 };
        let cfg = MpcConfig { c_v: 1e-4, ..MpcConfig::default() };
        let from = Vec2::new(0.01, 0.02);
        let b = block(from, 10);
        let f = mock.optimal_force(from, &cfg);
        assert!(f.norm_inf() < cfg.force_amp, "{f:?}");
        let c = |f: Vec2| horizon_cost(&mock.predict(&b, &(), f, cfg.horizon_blocks).unwrap(), f, &cfg).total();
        for d in [Vec2::new(1e-3, 0.0), Vec2::new(0.0, 1e-3)] {
            assert!(c(f) <= c(f + d) && c(f) <= c(f - d));
        }
    }
}
