//! Inverse-damping admittance control and the data-collection trajectories.
//!
//! Sign conventions used throughout the crate:
//! `e_p = p - p_d`, `e_f = F_s - F_d`, forces are the forces acting on the
//! knife (a knife pressing down senses a positive `F_z`).

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::plant::Plant;
use crate::{Error, Result, Vec2};

/// Diagonal stiffness (`k_p`, 1/s) and compliance (`k_a`, (m/s)/N) gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k_p: Vec2,
    pub k_a: Vec2,
}

impl Gains {
    pub fn new(k_p: Vec2, k_a: Vec2) -> Self {
        Gains { k_p, k_a }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_p.y >= 0.0 && self.k_p.z >= 0.0 && self.k_a.y >= 0.0 && self.k_a.z >= 0.0) {
            return Err(Error::Config(format!("gains must be non-negative: {self:?}")));
        }
        Ok(())
    }

    fn k_a_inverse(&self) -> Result<Vec2> {
        if !(self.k_a.y > 0.0 && self.k_a.z > 0.0) {
            return Err(Error::Config(format!(
                "compliance gain K_a must be strictly positive to form the reference force, got {:?}",
                self.k_a
            )));
        }
        Ok(Vec2::new(1.0 / self.k_a.y, 1.0 / self.k_a.z))
    }
}

/// Minimum-jerk quintic from `z0` to `z1`; `t` outside `[0, duration]` is
/// clamped to the endpoints.
pub fn quintic_descent(t: f64, duration: f64, z0: f64, z1: f64) -> (f64, f64) {
    let s = (t / duration).clamp(0.0, 1.0);
    let dz = z1 - z0;
    let pos = z0 + dz * s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let vel = if t < 0.0 || t > duration {
        0.0
    } else {
        dz / duration * 30.0 * s * s * (1.0 - s) * (1.0 - s)
    };
    (pos, vel)
}

/// Triangular wave about `center` with peak-to-peak `range`, starting at the
/// center moving in +y. At kinks the left-limit slope is returned.
pub fn triangular_saw(t: f64, center: f64, range: f64, period: f64) -> (f64, f64) {
    if range == 0.0 {
        return (center, 0.0);
    }
    let slope = 2.0 * range / period;
    let mut phase = t.rem_euclid(period);
    // rem_euclid maps the kink at t = k * period to phase 0, whose left limit
    // is on the final rising segment; treat it as phase = period.
    if phase == 0.0 && t > 0.0 {
        phase = period;
    }
    let quarter = 0.25 * period;
    if phase <= quarter {
        (center + slope * phase, slope)
    } else if phase <= 3.0 * quarter {
        (center + range / 2.0 - slope * (phase - quarter), -slope)
    } else {
        (center - range / 2.0 + slope * (phase - 3.0 * quarter), slope)
    }
}

/// Quintic descent on Z with triangular sawing on Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredTrajectory {
    pub z_start: f64,
    pub descent_depth: f64,
    pub duration: f64,
    pub saw_center: f64,
    pub saw_range: f64,
    pub saw_period: f64,
    pub f_d: Vec2,
}

impl DesiredTrajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.saw_period > 0.0) || !(self.saw_range >= 0.0) {
            return Err(Error::Config(format!("invalid trajectory {self:?}")));
        }
        Ok(())
    }

    /// Desired position and its exact time derivative.
    pub fn eval(&self, t: f64) -> (Vec2, Vec2) {
        let (y, ydot) = triangular_saw(t, self.saw_center, self.saw_range, self.saw_period);
        let (z, zdot) = quintic_descent(t, self.duration, self.z_start, self.z_start - self.descent_depth);
        (Vec2::new(y, z), Vec2::new(ydot, zdot))
    }
}

/// `F_r = F_d - K_a^-1 (pdot_d - K_p e_p)`.
pub fn reference_force(p: Vec2, t: f64, traj: &DesiredTrajectory, g: &Gains) -> Result<Vec2> {
    let inv = g.k_a_inverse()?;
    let (p_d, pdot_d) = traj.eval(t);
    let e_p = p - p_d;
    Ok(traj.f_d - (pdot_d - g.k_p.hadamard(e_p)).hadamard(inv))
}

/// Inverse damping law `u = K_a (F_s - F_r)`.
pub fn control_law(f_s: Vec2, f_r: Vec2, g: &Gains) -> Vec2 {
    g.k_a.hadamard(f_s - f_r)
}

/// Anything that takes a velocity command and reports position and force.
pub trait Actuated {
    fn position(&self) -> Vec2;
    fn sensed_force(&self) -> Vec2;
    fn actuate(&mut self, u: Vec2) -> Result<()>;
}

impl Actuated for Plant {
    fn position(&self) -> Vec2 {
        self.state().p
    }

    fn sensed_force(&self) -> Vec2 {
        Plant::sensed_force(self)
    }

    fn actuate(&mut self, u: Vec2) -> Result<()> {
        self.step(u).map(|_| ())
    }
}

/// Velocity-perfect plant (no lag, no contact) with a constant force
/// reading. Used to check closed-loop behaviour against the analytic
/// first-order error dynamics.
#[derive(Debug, Clone)]
pub struct LagFreePlant {
    pub p: Vec2,
    pub force: Vec2,
    pub dt: f64,
}

impl Actuated for LagFreePlant {
    fn position(&self) -> Vec2 {
        self.p
    }

    fn sensed_force(&self) -> Vec2 {
        self.force
    }

    fn actuate(&mut self, u: Vec2) -> Result<()> {
        self.p += u * self.dt;
        Ok(())
    }
}

/// One log row: measurements at time `t` and the reference force applied
/// from `t` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: Vec2,
    pub f_s: Vec2,
    pub f_r: Vec2,
}

pub const TRIAL_CSV_COLUMNS: [&str; 7] = ["t", "p_y", "p_z", "F_s_y", "F_s_z", "F_r_y", "F_r_z"];
pub const TRIAL_CSV_UNITS: &str = "# units: t [s], p_y [m], p_z [m], F_s_y [N], F_s_z [N], F_r_y [N], F_r_z [N]";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLog {
    pub samples: Vec<Sample>,
}

impl TrialLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRIAL_CSV_UNITS}").map_err(|e| Error::io("<trial csv>", e))?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(TRIAL_CSV_COLUMNS)?;
        for s in &self.samples {
            csv.write_record(
                [s.t, s.p.y, s.p.z, s.f_s.y, s.f_s.z, s.f_r.y, s.f_r.z].map(|v| v.to_string()),
            )?;
        }
        csv.flush().map_err(|e| Error::io("<trial csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a trial CSV. Extra columns (deployment logs) are ignored.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rdr.headers()?.clone();
        let idx = TRIAL_CSV_COLUMNS
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == *c)
                    .ok_or_else(|| Error::Data(format!("trial csv is missing column '{c}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v = idx
                .iter()
                .map(|&i| {
                    rec.get(i)
                        .and_then(|s| s.trim().parse::<f64>().ok())
                        .ok_or_else(|| Error::Data(format!("bad trial csv row {:?}", rec)))
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                t: v[0],
                p: Vec2::new(v[1], v[2]),
                f_s: Vec2::new(v[3], v[4]),
                f_r: Vec2::new(v[5], v[6]),
            });
        }
        Ok(TrialLog { samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Computes `F_r` then `u`, steps the plant, and logs `(t, p, F_s, F_r)`
/// measured before the step.
pub fn closed_loop_step<P: Actuated>(
    plant: &mut P,
    traj: &DesiredTrajectory,
    gains: &Gains,
    t: f64,
    log: &mut TrialLog,
) -> Result<Vec2> {
    let p = plant.position();
    let f_s = plant.sensed_force();
    let f_r = reference_force(p, t, traj, gains)?;
    let u = control_law(f_s, f_r, gains);
    log.samples.push(Sample { t, p, f_s, f_r });
    plant.actuate(u)?;
    Ok(u)
}

/// Stop conditions shared by every simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialLimits {
    /// Simulated seconds.
    pub timeout: f64,
    /// Componentwise bound on the noise-free contact force (N).
    pub force_limit: f64,
    /// Cut counts as complete when the cut front is within this of the table (m).
    pub cut_tolerance: f64,
}

impl Default for TrialLimits {
    fn default() -> Self {
        TrialLimits {
            timeout: 60.0,
            force_limit: 15.0,
            cut_tolerance: 0.0005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Timeout,
    ForceLimit,
}

/// A finished trajectory-tracking trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub log: TrialLog,
    /// Ground-truth cut front per logged sample.
    pub cut_front: Vec<f64>,
    pub termination: Termination,
    /// Time of completion, or of the last logged sample otherwise.
    pub end_time: f64,
}

/// Piecewise-constant offset added to `F_d`: `levels[k]` applies on
/// `[k * period, (k + 1) * period)`, the last level beyond the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub period: f64,
    pub levels: Vec<Vec2>,
}

impl Excitation {
    pub fn at(&self, t: f64) -> Vec2 {
        if self.levels.is_empty() || !(self.period > 0.0) {
            return Vec2::ZERO;
        }
        let k = ((t / self.period).max(0.0) as usize).min(self.levels.len() - 1);
        self.levels[k]
    }
}

/// Runs the admittance controller on a trajectory until the cut completes
/// (plus `hold_after_cut` seconds), the force limit trips, or `max_time`.
pub fn run_trajectory_trial(
    plant: &mut Plant,
    traj: &DesiredTrajectory,
    gains: &Gains,
    limits: &TrialLimits,
    max_time: f64,
    hold_after_cut: f64,
    excitation: Option<&Excitation>,
) -> Result<TrialOutcome> {
    gains.validate()?;
    traj.validate()?;
    let dt = plant.cfg.dt;
    let steps = (max_time / dt).round() as usize;
    let mut log = TrialLog::default();
    let mut cut_front = Vec::with_capacity(steps);
    let mut completed_at: Option<f64> = None;
    let mut termination = Termination::Timeout;
    for i in 0..steps {
        let t = i as f64 * dt;
        cut_front.push(plant.state().cut_front);
        match excitation {
            Some(e) => {
                let tr = DesiredTrajectory { f_d: traj.f_d + e.at(t), ..*traj };
                closed_loop_step(plant, &tr, gains, t, &mut log)?
            }
            None => closed_loop_step(plant, traj, gains, t, &mut log)?,
        };
        if plant.contact_force().norm_inf() > limits.force_limit {
            termination = Termination::ForceLimit;
            break;
        }
        if completed_at.is_none() && plant.is_cut_through(limits.cut_tolerance) {
            completed_at = Some(t + dt);
        }
        if let Some(tc) = completed_at {
            if t + dt >= tc + hold_after_cut - 1e-9 {
                break;
            }
        }
    }
    if let Some(tc) = completed_at {
        termination = Termination::Completed;
        return Ok(TrialOutcome { log, cut_front, termination, end_time: tc });
    }
    let end_time = log.samples.last().map_or(0.0, |s| s.t + dt);
    Ok(TrialOutcome { log, cut_front, termination, end_time })
}

/// Ranges for randomised data-collection trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionRanges {
    pub k_a: (f64, f64),
    pub k_p: (f64, f64),
    pub duration: (f64, f64),
    pub saw_period: (f64, f64),
    /// Peak-to-peak sawing range, constant across trials (m).
    pub saw_range: f64,
    /// Start height above the object's top (m).
    pub clearance: (f64, f64),
    /// How far below the table the descent is commanded (m).
    pub overshoot: (f64, f64),
    /// Extra time logged after the descent ends (s).
    pub tail: f64,
    /// Time logged after the cut completes (s). Resting on the table the
    /// knife feels nothing whatever it is commanded, which teaches the model
    /// that force does not move it.
    pub hold: f64,
    /// Desired contact force per trial, per axis (N).
    pub f_d_y: (f64, f64),
    pub f_d_z: (f64, f64),
    /// Per-axis bound of the random piecewise-constant `F_d` offset (N);
    /// 0 disables it.
    pub excitation: f64,
    /// Range of the time each offset level is held (s).
    pub excitation_period: (f64, f64),
}

impl Default for CollectionRanges {
    fn default() -> Self {
        CollectionRanges {
            k_a: (0.01, 0.03),
            k_p: (0.0, 2.0),
            duration: (1.5, 6.0),
            saw_period: (0.4, 2.0),
            saw_range: 0.03,
            clearance: (0.002, 0.015),
            overshoot: (0.0, 0.06),
            tail: 1.0,
            hold: 0.0,
            f_d_y: (-3.0, 3.0),
            f_d_z: (-1.0, 8.0),
            excitation: 4.0,
            excitation_period: (0.1, 0.5),
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Randomised gains, trajectory and force excitation for one
/// data-collection trial.
pub fn sample_trial_setup<R: Rng>(
    rng: &mut R,
    ranges: &CollectionRanges,
    object_top: f64,
    table_z: f64,
    saw_center: f64,
) -> (Gains, DesiredTrajectory, Option<Excitation>) {
    let gains = Gains::new(
        Vec2::new(uniform(rng, ranges.k_p), uniform(rng, ranges.k_p)),
        Vec2::new(uniform(rng, ranges.k_a), uniform(rng, ranges.k_a)),
    );
    let z_start = object_top + uniform(rng, ranges.clearance);
    let z_end = table_z - uniform(rng, ranges.overshoot);
    let traj = DesiredTrajectory {
        z_start,
        descent_depth: z_start - z_end,
        duration: uniform(rng, ranges.duration),
        saw_center,
        saw_range: ranges.saw_range,
        saw_period: uniform(rng, ranges.saw_period),
        f_d: Vec2::new(uniform(rng, ranges.f_d_y), uniform(rng, ranges.f_d_z)),
    };
    let excitation = (ranges.excitation > 0.0).then(|| {
        let a = ranges.excitation;
        let period = uniform(rng, ranges.excitation_period);
        let n = ((traj.duration + ranges.tail) / period).ceil() as usize + 1;
        let levels = (0..n).map(|_| Vec2::new(uniform(rng, (-a, a)), uniform(rng, (-a, a)))).collect();
        Excitation { period, levels }
    });
    (gains, traj, excitation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still() -> DesiredTrajectory {
        DesiredTrajectory {
            z_start: 0.1,
            descent_depth: 0.0,
            duration: 1.0,
            saw_center: 0.0,
            saw_range: 0.0,
            saw_period: 1.0,
            f_d: Vec2::ZERO,
        }
    }

    #[test]
    fn reference_force_collapses_to_desired_force() {
        let traj = DesiredTrajectory { f_d: Vec2::new(1.5, -2.0), ..still() };
        let g = Gains::new(Vec2::splat(1.0), Vec2::splat(0.05));
        let f = reference_force(Vec2::new(0.0, 0.1), 0.3, &traj, &g).unwrap();
        assert_eq!(f, traj.f_d);
    }

    #[test]
    fn reference_force_tracking_term() {
        // pdot_d = (0, -0.01) with the trajectory frozen at its midpoint slope:
        // use a pure descent and evaluate at the time of the requested slope.
        let g = Gains::new(Vec2::ZERO, Vec2::splat(0.1));
        let traj = DesiredTrajectory { descent_depth: 0.01 / 1.875, ..still() };
        let (p_d, pdot_d) = traj.eval(0.5);
        assert!((pdot_d.z + 0.01).abs() < 1e-12 && pdot_d.y == 0.0);
        let f = reference_force(p_d, 0.5, &traj, &g).unwrap();
        assert!((f.y - 0.0).abs() < 1e-12 && (f.z - 0.1).abs() < 1e-12, "{f:?}");

        let g2 = Gains::new(Vec2::ZERO, Vec2::splat(0.2));
        let f2 = reference_force(p_d, 0.5, &traj, &g2).unwrap();
        assert!((f2.z - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_compliance_is_a_gain_error() {
        let g = Gains::new(Vec2::splat(1.0), Vec2::new(0.1, 0.0));
        assert!(matches!(reference_force(Vec2::ZERO, 0.0, &still(), &g), Err(Error::Config(_))));
    }

    #[test]
    fn control_law_examples() {
        let g = Gains::new(Vec2::ZERO, Vec2::splat(0.05));
        let f = Vec2::new(0.3, 4.0);
        assert_eq!(control_law(f, f, &g), Vec2::ZERO);
        let u = control_law(Vec2::new(1.0, -2.0), Vec2::ZERO, &g);
        assert!((u.y - 0.05).abs() < 1e-15 && (u.z + 0.10).abs() < 1e-15);
        let u3 = control_law(Vec2::new(3.0, -6.0), Vec2::ZERO, &g);
        assert!((u3.y - 3.0 * u.y).abs() < 1e-15 && (u3.z - 3.0 * u.z).abs() < 1e-15);
    }

    #[test]
    fn axes_are_independent() {
        let g = Gains::new(Vec2::new(1.0, 2.0), Vec2::new(0.02, 0.05));
        let traj = DesiredTrajectory { descent_depth: 0.05, saw_range: 0.03, ..still() };
        let a = reference_force(Vec2::new(0.01, 0.09), 0.4, &traj, &g).unwrap();
        let b = reference_force(Vec2::new(0.01, 0.02), 0.4, &traj, &g).unwrap();
        assert_eq!(a.y, b.y);
        let ua = control_law(Vec2::new(1.0, 5.0), a, &g);
        let ub = control_law(Vec2::new(1.0, -5.0), a, &g);
        assert_eq!(ua.y, ub.y);
    }

    #[test]
    fn quintic_boundaries_and_midpoint() {
        let (z0, z1, d) = (0.08, -0.02, 4.0);
        assert_eq!(quintic_descent(0.0, d, z0, z1), (z0, 0.0));
        let (ze, ve) = quintic_descent(d, d, z0, z1);
        assert!((ze - z1).abs() < 1e-15 && ve.abs() < 1e-15);
        let (zm, vm) = quintic_descent(d / 2.0, d, z0, z1);
        assert!((zm - (z0 + z1) / 2.0).abs() < 1e-15);
        assert!((vm - 1.875 * (z1 - z0) / d).abs() < 1e-15);
        // Clamped outside the interval.
        assert_eq!(quintic_descent(-1.0, d, z0, z1), (z0, 0.0));
        assert_eq!(quintic_descent(9.0, d, z0, z1).1, 0.0);
    }

    #[test]
    fn quintic_velocity_is_derivative() {
        let (z0, z1, d) = (0.05, 0.0, 3.0);
        for i in 1..30 {
            let t = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (quintic_descent(t + h, d, z0, z1).0 - quintic_descent(t - h, d, z0, z1).0) / (2.0 * h);
            assert!((fd - quintic_descent(t, d, z0, z1).1).abs() < 1e-8);
        }
    }

    #[test]
    fn triangular_saw_examples() {
        let (c, r, per) = (0.01, 0.03, 2.0);
        let slope = 2.0 * r / per;
        assert_eq!(triangular_saw(0.0, c, r, per), (c, slope));
        let (y, v) = triangular_saw(per / 4.0, c, r, per);
        assert!((y - (c + r / 2.0)).abs() < 1e-15 && v == slope);
        let (y, v) = triangular_saw(3.0 * per / 4.0, c, r, per);
        assert!((y - (c - r / 2.0)).abs() < 1e-15 && v == -slope);
        let (y, v) = triangular_saw(per, c, r, per);
        assert!((y - c).abs() < 1e-15 && v == slope);
        for t in [0.0, 0.3, 1.7, 5.5] {
            assert_eq!(triangular_saw(t, c, 0.0, per), (c, 0.0));
        }
        // Peak-to-peak range and exact derivative away from kinks.
        let ys: Vec<f64> = (0..2000).map(|i| triangular_saw(i as f64 * 0.001, c, r, per).0).collect();
        let (lo, hi) = ys.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
        assert!((hi - lo - r).abs() < 1e-3 * r);
        for t in [0.2, 0.9, 1.3, 1.8] {
            let h = 1e-7;
            let fd = (triangular_saw(t + h, c, r, per).0 - triangular_saw(t - h, c, r, per).0) / (2.0 * h);
            assert!((fd - triangular_saw(t, c, r, per).1).abs() < 1e-6);
        }
    }

    #[test]
    fn free_space_error_decays_exponentially() {
        let k_p = 1.0;
        let g = Gains::new(Vec2::splat(k_p), Vec2::splat(0.05));
        let dt = 0.001;
        let traj = still();
        let e0 = Vec2::new(0.02, -0.01);
        let mut plant = LagFreePlant { p: Vec2::new(0.0, 0.1) + e0, force: Vec2::ZERO, dt };
        let mut log = TrialLog::default();
        let n = (1.0 / (k_p * dt)).round() as usize;
        for i in 0..=n {
            closed_loop_step(&mut plant, &traj, &g, i as f64 * dt, &mut log).unwrap();
        }
        let s = log.samples[n];
        let e = s.p - Vec2::new(0.0, 0.1);
        let expected = e0 * (-1.0f64).exp();
        assert!(((e.y - expected.y) / expected.y).abs() < 0.02);
        assert!(((e.z - expected.z) / expected.z).abs() < 0.02);
    }

    #[test]
    fn constant_force_offset_shifts_equilibrium() {
        let g = Gains::new(Vec2::new(1.5, 2.0), Vec2::new(0.04, 0.02));
        let dt = 0.01;
        let force = Vec2::new(0.5, -1.0);
        let mut plant = LagFreePlant { p: Vec2::new(0.0, 0.1), force, dt };
        let mut log = TrialLog::default();
        for i in 0..3000 {
            closed_loop_step(&mut plant, &still(), &g, i as f64 * dt, &mut log).unwrap();
        }
        let e = plant.p - Vec2::new(0.0, 0.1);
        assert!((e.y - 0.04 * 0.5 / 1.5).abs() < 1e-9);
        assert!((e.z - 0.02 * -1.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_stiffness_reduces_to_pure_admittance() {
        let g = Gains::new(Vec2::ZERO, Vec2::splat(0.05));
        let force = Vec2::new(0.4, 1.2);
        let mut plant = LagFreePlant { p: Vec2::new(0.0, 0.1), force, dt: 0.01 };
        let mut log = TrialLog::default();
        let u = closed_loop_step(&mut plant, &still(), &g, 0.0, &mut log).unwrap();
        assert_eq!(log.samples[0].f_r, Vec2::ZERO);
        assert_eq!(u, g.k_a.hadamard(force));
    }

    #[test]
    fn csv_round_trip_and_header() {
        let log = TrialLog {
            samples: (0..5)
                .map(|i| Sample {
                    t: i as f64 * 0.01,
                    p: Vec2::new(0.1 / 3.0, -1e-7 * i as f64),
                    f_s: Vec2::new(1.0 / 7.0, 2.5),
                    f_r: Vec2::new(-0.3, 1e300),
                })
                .collect(),
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# units"));
        assert_eq!(lines.next().unwrap(), "t,p_y,p_z,F_s_y,F_s_z,F_r_y,F_r_z");
        assert_eq!(TrialLog::read_csv(&buf[..]).unwrap(), log);
    }
}
