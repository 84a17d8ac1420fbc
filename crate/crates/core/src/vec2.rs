use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A task-space 2-vector: `y` is the sawing axis, `z` the cutting axis
/// (positive up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub y: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { y: 0.0, z: 0.0 };

    pub const fn new(y: f64, z: f64) -> Self {
        Vec2 { y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Vec2 { y: v, z: v }
    }

    /// Componentwise product, i.e. multiplication by a diagonal matrix.
    pub fn hadamard(self, o: Vec2) -> Vec2 {
        Vec2::new(self.y * o.y, self.z * o.z)
    }

    pub fn norm_sq(self) -> f64 {
        self.y * self.y + self.z * self.z
    }

    pub fn norm_inf(self) -> f64 {
        self.y.abs().max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec2 {
        Vec2::new(f(self.y), f(self.z))
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.y, self.z]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.y * s, self.z * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.y, -self.z)
    }
}
