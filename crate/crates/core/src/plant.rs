//! Synthetic 2-axis contact plant standing in for the robot, force sensor
//! and the object being cut.
//!
//! The knife edge is a point `p = (y, z)` driven by a commanded Cartesian
//! velocity through a first-order actuator lag. The object is a slab resting
//! on the table, described by piecewise-constant stiffness and cuttability
//! profiles over the depth fraction `d = (top - z) / height`. Contact laws:
//!
//! * normal force `F_z = k(d) * delta`, `delta = max(0, cut_front - z)`;
//! * cut-front advance `beta(d) * delta * (eps + |v_y|)`;
//! * lateral force `-(mu * F_z + adhesion * embedded_length) * tanh(v_y / v_ref)`.
//!
//! Zero-stiffness depth bands are empty space: the cut front follows the
//! knife through them without resistance. An edge that reaches the table
//! finishes the cut, unless an uncuttable layer remains above it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec2};

/// Piecewise-constant function of depth fraction. Each segment is
/// `(start, value)`; the first segment starts at 0 and starts are strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(Vec<(f64, f64)>);

impl Profile {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        let p = Profile(segments);
        p.validate()?;
        Ok(p)
    }

    pub fn constant(v: f64) -> Self {
        Profile(vec![(0.0, v)])
    }

    /// Profile equal to `outer` everywhere except `value` on `[lo, hi)`.
    pub fn with_band(outer: f64, lo: f64, hi: f64, value: f64) -> Self {
        Profile(vec![(0.0, outer), (lo, value), (hi, outer)])
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .0
            .first()
            .ok_or_else(|| Error::Config("profile has no segments".into()))?;
        if first.0 != 0.0 {
            return Err(Error::Config("profile must start at depth 0".into()));
        }
        for w in self.0.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].0 > 1.0 {
                return Err(Error::Config(format!(
                    "profile segment starts must increase within [0, 1], got {} after {}",
                    w[1].0, w[0].0
                )));
            }
        }
        if self.0.iter().any(|s| !(s.1 >= 0.0) || !s.1.is_finite()) {
            return Err(Error::Config("profile values must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn segment_index(&self, depth: f64) -> usize {
        self.0
            .iter()
            .rposition(|s| s.0 <= depth)
            .unwrap_or(0)
    }

    pub fn eval(&self, depth: f64) -> f64 {
        self.0[self.segment_index(depth)].1
    }

    /// End (depth fraction) of the segment containing `depth`.
    pub fn segment_end(&self, depth: f64) -> f64 {
        let i = self.segment_index(depth);
        self.0.get(i + 1).map_or(1.0, |s| s.0)
    }
}

/// A parameterised synthetic object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    /// Lateral interval (m) over which the blade is in the object.
    pub y_extent: (f64, f64),
    /// Height above the table (m).
    pub height: f64,
    /// N/m.
    pub stiffness: Profile,
    /// Cut-front advance per unit penetration and sawing speed.
    pub cuttability: Profile,
    pub friction_coeff: f64,
    /// N per meter of embedded blade.
    pub adhesion: f64,
    /// Cutting floor that lets pure pressing advance the cut (m/s equivalent).
    pub press_cut_floor: f64,
    /// N.
    pub force_noise_std: f64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("material {}: {m}", self.name)));
        if !(self.height > 0.0) {
            return bad("height must be > 0");
        }
        if !(self.y_extent.1 > self.y_extent.0) {
            return bad("y_extent must be a non-empty interval");
        }
        if !(self.friction_coeff >= 0.0) || !(self.adhesion >= 0.0) {
            return bad("friction coefficient and adhesion must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.press_cut_floor) {
            return bad("press_cut_floor must lie in [0, 1]");
        }
        if !(self.force_noise_std >= 0.0) {
            return bad("force noise std must be >= 0");
        }
        self.stiffness.validate()?;
        self.cuttability.validate()
    }

    pub fn top(&self, table_z: f64) -> f64 {
        table_z + self.height
    }

    pub fn center_y(&self) -> f64 {
        0.5 * (self.y_extent.0 + self.y_extent.1)
    }

    pub fn contains_y(&self, y: f64) -> bool {
        y >= self.y_extent.0 && y <= self.y_extent.1
    }

    /// Depth fraction of height `z`, clamped to `[0, 1]`.
    pub fn depth_fraction(&self, z: f64, table_z: f64) -> f64 {
        ((self.top(table_z) - z) / self.height).clamp(0.0, 1.0)
    }

    /// Depth band `[lo, hi)` where cuttability is zero, if any (carrot core).
    pub fn uncuttable_band(&self) -> Option<(f64, f64)> {
        let segs = self.cuttability.segments();
        segs.iter().enumerate().find_map(|(i, s)| {
            (s.1 == 0.0).then(|| (s.0, segs.get(i + 1).map_or(1.0, |n| n.0)))
        })
    }
}

/// Names accepted by [`make_material`].
pub const PRESET_NAMES: [&str; 9] = [
    "cake",
    "cucumber",
    "zucchini",
    "cheese",
    "bell-pepper",
    "lemon",
    "potato",
    "carrot",
    "air",
];

fn canonical_label(label: &str) -> &str {
    match label {
        "hollow-pepper" | "pepper" | "red-pepper" => "bell-pepper",
        other => other,
    }
}

/// Built-in material presets. Magnitudes are tuned for the simulated plant
/// and carry no physical ground truth.
pub fn make_material(label: &str) -> Result<MaterialSpec> {
    let name = canonical_label(label);
    let base = |height: f64,
                stiffness: Profile,
                cuttability: Profile,
                friction_coeff: f64,
                adhesion: f64,
                press_cut_floor: f64| MaterialSpec {
        name: name.to_string(),
        y_extent: (-0.06, 0.06),
        height,
        stiffness,
        cuttability,
        friction_coeff,
        adhesion,
        press_cut_floor,
        force_noise_std: 0.05,
    };
    let spec = match name {
        "cake" => base(0.05, Profile::constant(400.0), Profile::constant(60.0), 0.02, 1.0, 0.3),
        "cucumber" => base(0.04, Profile::constant(900.0), Profile::constant(30.0), 0.08, 4.0, 0.2),
        "zucchini" => base(0.045, Profile::constant(1400.0), Profile::constant(14.0), 0.25, 20.0, 0.05),
        "cheese" => base(0.04, Profile::constant(1800.0), Profile::constant(10.0), 0.35, 35.0, 0.08),
        "bell-pepper" => base(
            0.06,
            Profile::with_band(1500.0, 0.2, 0.8, 0.0),
            Profile::constant(12.0),
            0.15,
            5.0,
            0.1,
        ),
        "lemon" => base(
            0.05,
            Profile(vec![(0.0, 1800.0), (0.1, 900.0), (0.9, 1800.0)]),
            Profile(vec![(0.0, 10.0), (0.1, 24.0), (0.9, 10.0)]),
            0.2,
            10.0,
            0.1,
        ),
        "potato" => base(0.05, Profile::constant(2200.0), Profile::constant(12.0), 0.3, 45.0, 0.02),
        "carrot" => base(
            0.04,
            Profile::with_band(1500.0, 0.4, 0.6, 1800.0),
            Profile::with_band(16.0, 0.4, 0.6, 0.0),
            0.3,
            25.0,
            0.05,
        ),
        "air" => base(0.05, Profile::constant(0.0), Profile::constant(0.0), 0.0, 0.0, 0.0),
        _ => {
            return Err(Error::Config(format!(
                "unknown material '{label}'; valid presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}

/// Partial override of a material, as read from a config file. Unset fields
/// keep the preset's value; a new label must set every field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialOverride {
    pub y_extent: Option<(f64, f64)>,
    pub height: Option<f64>,
    pub stiffness: Option<Profile>,
    pub cuttability: Option<Profile>,
    pub friction_coeff: Option<f64>,
    pub adhesion: Option<f64>,
    pub press_cut_floor: Option<f64>,
    pub force_noise_std: Option<f64>,
}

impl MaterialOverride {
    fn apply(&self, mut m: MaterialSpec) -> MaterialSpec {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { m.$f = v.clone(); } )* };
        }
        set!(y_extent, height, stiffness, cuttability, friction_coeff, adhesion, press_cut_floor, force_noise_std);
        m
    }

    fn into_full(self, name: &str) -> Result<MaterialSpec> {
        let missing = |f: &str| Error::Config(format!("new material '{name}' is missing field '{f}'"));
        Ok(MaterialSpec {
            name: name.to_string(),
            y_extent: self.y_extent.ok_or_else(|| missing("y_extent"))?,
            height: self.height.ok_or_else(|| missing("height"))?,
            stiffness: self.stiffness.ok_or_else(|| missing("stiffness"))?,
            cuttability: self.cuttability.ok_or_else(|| missing("cuttability"))?,
            friction_coeff: self.friction_coeff.ok_or_else(|| missing("friction_coeff"))?,
            adhesion: self.adhesion.ok_or_else(|| missing("adhesion"))?,
            press_cut_floor: self.press_cut_floor.ok_or_else(|| missing("press_cut_floor"))?,
            force_noise_std: self.force_noise_std.ok_or_else(|| missing("force_noise_std"))?,
        })
    }
}

/// Presets plus config-file overrides.
#[derive(Debug, Clone, Default)]
pub struct MaterialLibrary {
    overrides: BTreeMap<String, MaterialOverride>,
}

impl MaterialLibrary {
    pub fn new(overrides: BTreeMap<String, MaterialOverride>) -> Result<Self> {
        let lib = MaterialLibrary { overrides };
        for name in lib.overrides.keys() {
            lib.get(name)?;
        }
        Ok(lib)
    }

    pub fn get(&self, label: &str) -> Result<MaterialSpec> {
        let name = canonical_label(label);
        let spec = match (make_material(name), self.overrides.get(name)) {
            (Ok(preset), Some(o)) => o.apply(preset),
            (Ok(preset), None) => preset,
            (Err(_), Some(o)) => o.clone().into_full(name)?,
            (Err(e), None) => return Err(e),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Plant step (s).
    pub dt: f64,
    /// First-order velocity lag (s).
    pub actuator_tau: f64,
    /// Coulomb smoothing scale (m/s).
    pub v_ref: f64,
    pub table_z: f64,
    /// Maximum penetration into uncut material (m).
    pub penetration_max: f64,
    pub rng_seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            dt: 0.01,
            actuator_tau: 0.01,
            v_ref: 0.05,
            table_z: 0.0,
            penetration_max: 0.01,
            rng_seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.actuator_tau >= 0.0) || !(self.v_ref > 0.0) {
            return Err(Error::Config("plant requires dt > 0, actuator_tau >= 0, v_ref > 0".into()));
        }
        if !(self.penetration_max > 0.0) || !self.table_z.is_finite() {
            return Err(Error::Config("plant requires penetration_max > 0 and finite table_z".into()));
        }
        Ok(())
    }
}

/// Ground-truth plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub p: Vec2,
    pub v: Vec2,
    /// Lowest z reached by the cut inside the object.
    pub cut_front: f64,
    pub in_contact: bool,
}

impl PlantState {
    /// Knife at rest at `p` above an uncut object.
    pub fn at_rest(p: Vec2, mat: &MaterialSpec, cfg: &PlantConfig) -> Self {
        PlantState {
            p,
            v: Vec2::ZERO,
            cut_front: mat.top(cfg.table_z),
            in_contact: false,
        }
    }
}

/// Length of blade below the object's top surface and above the cut front.
pub fn embedded_length(state: &PlantState, mat: &MaterialSpec, table_z: f64) -> f64 {
    if !mat.contains_y(state.p.y) {
        return 0.0;
    }
    let top = mat.top(table_z);
    (top - state.p.z.max(state.cut_front)).clamp(0.0, mat.height)
}

/// Noise-free plant transition. Returns the next state and the contact force
/// acting on the knife (upward positive on Z).
pub fn contact_step(
    state: &PlantState,
    u: Vec2,
    mat: &MaterialSpec,
    cfg: &PlantConfig,
) -> Result<(PlantState, Vec2)> {
    if !u.is_finite() || !state.p.is_finite() || !state.v.is_finite() || !state.cut_front.is_finite() {
        return Err(Error::Simulation(format!(
            "non-finite plant input: u={u:?} state={state:?}"
        )));
    }
    let dt = cfg.dt;
    let (v_next, disp) = if cfg.actuator_tau > 0.0 {
        let a = (-dt / cfg.actuator_tau).exp();
        let v_next = u + (state.v - u) * a;
        let disp = u * dt + (state.v - u) * (cfg.actuator_tau * (1.0 - a));
        (v_next, disp)
    } else {
        (u, u * dt)
    };
    let mut next = PlantState {
        p: state.p + disp,
        v: v_next,
        cut_front: state.cut_front,
        in_contact: false,
    };
    if next.p.z < cfg.table_z {
        next.p.z = cfg.table_z;
        next.v.z = next.v.z.max(0.0);
    }
    if !mat.contains_y(state.p.y) && mat.contains_y(next.p.y) && next.p.z < state.cut_front {
        // The uncut side of the object blocks a blade sliding back in low.
        next.p.y = state.p.y;
        next.v.y = 0.0;
    }
    if !mat.contains_y(next.p.y) {
        return Ok((next, Vec2::ZERO));
    }

    let top = mat.top(cfg.table_z);
    let z_of = |d: f64| top - d * mat.height;

    // Empty bands offer no resistance; the cut front tracks the knife.
    loop {
        let d = mat.depth_fraction(next.cut_front, cfg.table_z);
        if next.cut_front <= cfg.table_z || next.p.z >= next.cut_front || mat.stiffness.eval(d) > 0.0 {
            break;
        }
        let band_floor = z_of(mat.stiffness.segment_end(d)).max(cfg.table_z);
        next.cut_front = next.p.z.max(band_floor);
        if next.cut_front > band_floor {
            break;
        }
    }

    // With the edge on the table nothing is left beneath the blade, unless
    // an uncuttable layer is still in the way.
    if next.p.z <= cfg.table_z && next.cut_front > cfg.table_z {
        let d = mat.depth_fraction(next.cut_front, cfg.table_z);
        let blocked = mat.cuttability.segments().iter().enumerate().any(|(i, s)| {
            let end = mat.cuttability.segments().get(i + 1).map_or(1.0, |n| n.0);
            s.1 == 0.0 && end > d
        });
        if !blocked {
            next.cut_front = cfg.table_z;
        }
    }

    if next.p.z < next.cut_front - cfg.penetration_max {
        next.p.z = next.cut_front - cfg.penetration_max;
        next.v.z = next.v.z.max(0.0);
    }

    let d = mat.depth_fraction(next.cut_front, cfg.table_z);
    let delta = (next.cut_front - next.p.z).max(0.0);
    let f_z = mat.stiffness.eval(d) * delta;
    let saw_speed = next.v.y.abs();
    let advance = mat.cuttability.eval(d) * delta * (mat.press_cut_floor + saw_speed) * dt;
    let mut floor = cfg.table_z;
    let end = mat.cuttability.segment_end(d);
    if end < 1.0 && mat.cuttability.eval(end) == 0.0 {
        // An uncuttable segment below stops the front at its boundary.
        floor = floor.max(z_of(end));
    }
    next.cut_front = (next.cut_front - advance).max(floor).min(next.cut_front);

    let embedded = embedded_length(&next, mat, cfg.table_z);
    let resistance = mat.friction_coeff * f_z + mat.adhesion * embedded;
    let f_y = -resistance * (next.v.y / cfg.v_ref).tanh();
    next.in_contact = delta > 0.0 || embedded > 0.0;
    Ok((next, Vec2::new(f_y, f_z)))
}

/// A stateful plant instance: material, configuration, state and the seeded
/// force-noise stream.
#[derive(Debug, Clone)]
pub struct Plant {
    pub cfg: PlantConfig,
    pub material: MaterialSpec,
    state: PlantState,
    sensed: Vec2,
    contact: Vec2,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Plant {
    pub fn new(cfg: PlantConfig, material: MaterialSpec, start: Vec2) -> Result<Self> {
        cfg.validate()?;
        material.validate()?;
        let state = PlantState::at_rest(start, &material, &cfg);
        let noise = (material.force_noise_std > 0.0)
            .then(|| Normal::new(0.0, material.force_noise_std).expect("validated std"));
        let mut plant = Plant {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            material,
            state,
            sensed: Vec2::ZERO,
            contact: Vec2::ZERO,
            noise,
        };
        plant.sensed = plant.add_noise(Vec2::ZERO);
        Ok(plant)
    }

    fn add_noise(&mut self, f: Vec2) -> Vec2 {
        match &self.noise {
            Some(n) => Vec2::new(f.y + n.sample(&mut self.rng), f.z + n.sample(&mut self.rng)),
            None => f,
        }
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// Most recent force-sensor reading.
    pub fn sensed_force(&self) -> Vec2 {
        self.sensed
    }

    /// Most recent noise-free contact force.
    pub fn contact_force(&self) -> Vec2 {
        self.contact
    }

    pub fn object_top(&self) -> f64 {
        self.material.top(self.cfg.table_z)
    }

    pub fn is_cut_through(&self, tolerance: f64) -> bool {
        self.state.cut_front <= self.cfg.table_z + tolerance
    }

    /// Advance one plant step under commanded velocity `u`; returns the new
    /// state and the sensed force.
    pub fn step(&mut self, u: Vec2) -> Result<(PlantState, Vec2)> {
        let (next, contact) = contact_step(&self.state, u, &self.material, &self.cfg)?;
        if !(next.cut_front <= self.state.cut_front) {
            return Err(Error::Simulation("cut front moved upward".into()));
        }
        self.state = next;
        self.contact = contact;
        self.sensed = self.add_noise(contact);
        Ok((self.state, self.sensed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut m: MaterialSpec) -> MaterialSpec {
        m.force_noise_std = 0.0;
        m
    }

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn presets_are_pure_and_valid() {
        for name in PRESET_NAMES {
            let a = make_material(name).unwrap();
            assert_eq!(a, make_material(name).unwrap());
            a.validate().unwrap();
        }
    }

    #[test]
    fn unknown_label_lists_presets() {
        let err = make_material("banana").unwrap_err().to_string();
        assert!(err.contains("carrot") && err.contains("cake"), "{err}");
    }

    #[test]
    fn carrot_has_uncuttable_core() {
        let m = make_material("carrot").unwrap();
        assert_eq!(m.uncuttable_band(), Some((0.4, 0.6)));
        assert_eq!(m.cuttability.eval(0.5), 0.0);
        assert!(m.cuttability.eval(0.39) > 0.0 && m.cuttability.eval(0.6) > 0.0);
    }

    #[test]
    fn hollow_pepper_has_empty_interior() {
        let m = make_material("hollow-pepper").unwrap();
        assert_eq!(m.name, "bell-pepper");
        for d in [0.2, 0.5, 0.79] {
            assert_eq!(m.stiffness.eval(d), 0.0);
        }
        assert!(m.stiffness.eval(0.19) > 0.0 && m.stiffness.eval(0.8) > 0.0);
    }

    #[test]
    fn edge_on_table_completes_the_cut() {
        let c = cfg();
        let s = PlantState { p: Vec2::new(0.0, 0.001), v: Vec2::new(0.0, -0.2), cut_front: 0.004, in_contact: true };
        let cake = quiet(make_material("cake").unwrap());
        let (next, f) = contact_step(&s, Vec2::new(0.0, -0.2), &cake, &c).unwrap();
        assert_eq!((next.p.z, next.cut_front), (c.table_z, c.table_z));
        assert_eq!(f.z, 0.0);
        // Just above the table the material is still there.
        let slow = PlantState { v: Vec2::new(0.0, -0.01), ..s };
        let (next, _) = contact_step(&slow, Vec2::new(0.0, -0.01), &cake, &c).unwrap();
        assert!(next.cut_front > c.table_z);
    }

    #[test]
    fn side_of_the_object_blocks_low_entry() {
        let c = cfg();
        let cake = quiet(make_material("cake").unwrap());
        let out = PlantState { p: Vec2::new(0.061, 0.01), v: Vec2::new(-0.2, 0.0), cut_front: 0.03, in_contact: false };
        let (next, f) = contact_step(&out, Vec2::new(-0.2, 0.0), &cake, &c).unwrap();
        assert_eq!((next.p.y, next.v.y, f), (0.061, 0.0, Vec2::ZERO));
        let high = PlantState { p: Vec2::new(0.061, 0.04), ..out };
        assert!(contact_step(&high, Vec2::new(-0.2, 0.0), &cake, &c).unwrap().0.p.y < 0.06);
    }

    #[test]
    fn override_and_new_material() {
        let mut o = BTreeMap::new();
        o.insert(
            "cake".to_string(),
            MaterialOverride { friction_coeff: Some(0.5), ..Default::default() },
        );
        let lib = MaterialLibrary::new(o).unwrap();
        assert_eq!(lib.get("cake").unwrap().friction_coeff, 0.5);

        let mut o = BTreeMap::new();
        o.insert("tofu".to_string(), MaterialOverride { height: Some(0.03), ..Default::default() });
        assert!(MaterialLibrary::new(o).is_err());
    }

    #[test]
    fn analytic_normal_force() {
        let mut m = quiet(make_material("cucumber").unwrap());
        m.stiffness = Profile::constant(2000.0);
        let c = PlantConfig { actuator_tau: 0.0, ..cfg() };
        let top = m.top(c.table_z);
        let mut s = PlantState::at_rest(Vec2::new(0.0, top - 0.001), &m, &c);
        s.cut_front = top;
        let (_, f) = contact_step(&s, Vec2::ZERO, &m, &c).unwrap();
        assert!((f.z - 2.0).abs() < 1e-9, "{f:?}");
    }

    #[test]
    fn above_object_senses_noise_only() {
        let m = make_material("potato").unwrap();
        let c = cfg();
        let mut plant = Plant::new(c.clone(), m.clone(), Vec2::new(0.0, m.top(0.0) + 0.02)).unwrap();
        let front = plant.state().cut_front;
        for _ in 0..50 {
            let (s, f) = plant.step(Vec2::new(0.05, 0.0)).unwrap();
            assert_eq!(s.cut_front, front);
            assert_eq!(plant.contact_force(), Vec2::ZERO);
            assert!(f.norm_inf() < 6.0 * m.force_noise_std);
        }
    }

    #[test]
    fn uncuttable_band_never_passes() {
        let m = quiet(make_material("carrot").unwrap());
        let c = cfg();
        let band_top = m.top(0.0) - 0.4 * m.height;
        let mut plant = Plant::new(c, m, Vec2::new(0.0, band_top)).unwrap();
        // Place the cut front at the core with the knife pressed into it.
        plant.state.cut_front = band_top;
        for i in 0..1000 {
            let saw = if (i / 20) % 2 == 0 { 0.1 } else { -0.1 };
            plant.step(Vec2::new(saw, -0.2)).unwrap();
        }
        assert_eq!(plant.state().cut_front, band_top);
        assert!(plant.state().p.z >= band_top - plant.cfg.penetration_max - 1e-12);
    }

    #[test]
    fn embedded_length_geometry() {
        let m = make_material("cheese").unwrap();
        let c = cfg();
        let top = m.top(0.0);
        let above = PlantState::at_rest(Vec2::new(0.0, top + 0.01), &m, &c);
        assert_eq!(embedded_length(&above, &m, 0.0), 0.0);
        let through = PlantState { p: Vec2::new(0.0, 0.0), v: Vec2::ZERO, cut_front: 0.0, in_contact: true };
        assert_eq!(embedded_length(&through, &m, 0.0), m.height);
        // Mid cut: knife 3 mm below a cut front 12 mm under the top.
        let mid = PlantState {
            p: Vec2::new(0.0, top - 0.015),
            v: Vec2::ZERO,
            cut_front: top - 0.012,
            in_contact: true,
        };
        let expected = (top - f64::max(top - 0.015, top - 0.012)).clamp(0.0, m.height);
        assert!((embedded_length(&mid, &m, 0.0) - expected).abs() < 1e-15);
        assert!((expected - 0.012).abs() < 1e-12);
        let outside = PlantState { p: Vec2::new(0.5, top - 0.015), ..mid };
        assert_eq!(embedded_length(&outside, &m, 0.0), 0.0);
    }

    #[test]
    fn nan_command_is_a_fault() {
        let m = make_material("cake").unwrap();
        let mut plant = Plant::new(cfg(), m, Vec2::new(0.0, 0.1)).unwrap();
        assert!(matches!(plant.step(Vec2::new(f64::NAN, 0.0)), Err(Error::Simulation(_))));
    }

    #[test]
    fn velocity_decays_without_contact() {
        let m = make_material("cake").unwrap();
        let c = PlantConfig { actuator_tau: 0.02, ..cfg() };
        let mut plant = Plant::new(c.clone(), m, Vec2::new(0.0, 0.2)).unwrap();
        // Spin up, then release.
        for _ in 0..100 {
            plant.step(Vec2::new(0.1, 0.05)).unwrap();
        }
        let v0 = plant.state().v;
        let steps = (5.0 * c.actuator_tau / c.dt).round() as usize;
        for _ in 0..steps {
            plant.step(Vec2::ZERO).unwrap();
        }
        let v = plant.state().v;
        assert!(v.y.abs() <= 0.01 * v0.y.abs() && v.z.abs() <= 0.01 * v0.z.abs(), "{v:?} vs {v0:?}");
    }

    #[test]
    fn sawing_speeds_up_the_cut() {
        let mut m = quiet(make_material("potato").unwrap());
        m.press_cut_floor = 0.0;
        let c = PlantConfig { actuator_tau: 0.0, ..cfg() };
        let top = m.top(0.0);
        let advance = |vy: f64| {
            let s = PlantState {
                p: Vec2::new(0.0, top - 0.01 - 0.004),
                v: Vec2::new(vy, 0.0),
                cut_front: top - 0.01,
                in_contact: true,
            };
            let (n, _) = contact_step(&s, Vec2::new(vy, 0.0), &m, &c).unwrap();
            s.cut_front - n.cut_front
        };
        assert_eq!(advance(0.0), 0.0);
        let mut last = 0.0;
        for vy in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let a = advance(vy);
            assert!(a > last, "advance {a} at |v_y|={vy} not above {last}");
            assert_eq!(a, advance(-vy));
            last = a;
        }
    }
}
