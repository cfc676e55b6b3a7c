//! Unit quaternions and the exponential-map rotation parametrization.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `| |q| - 1 |` for a quaternion to count as a rotation.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation by `angle` radians about the vertical (+y) axis.
    pub fn from_yaw(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Representative with `w >= 0` of the same rotation.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = *self * p * self.conjugate();
        [r.x, r.y, r.z]
    }

    /// Facing angle: heading of the rotated +z axis projected onto the
    /// ground plane, measured about +y.
    pub fn heading(&self) -> f64 {
        let f = self.rotate([0.0, 0.0, 1.0]);
        f[0].atan2(f[2])
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        if t == 0.0 {
            return *self;
        }
        let mut b = *other;
        let mut cos = self.dot(&b);
        if cos < 0.0 {
            b = b.neg();
            cos = -cos;
        }
        if t == 1.0 {
            return b;
        }
        if cos > 1.0 - 1e-12 {
            let lerp = Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
            return lerp.normalized();
        }
        let theta = cos.min(1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        Quat::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

/// Axis-angle vector of a unit quaternion, with the angle in `[0, π]`.
///
/// The quaternion is first moved to the `w >= 0` hemisphere, which removes
/// the double-cover ambiguity.
pub fn expmap_encode(q: &Quat) -> Result<[f64; 3]> {
    if !q.is_unit() {
        return Err(Error::invalid(format!(
            "expmap_encode: quaternion {q:?} has norm {}, expected 1",
            q.norm()
        )));
    }
    let q = q.canonical();
    let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    let factor = if s < 1e-8 {
        // 2·atan2(s, w)/s expanded around s = 0
        2.0 / q.w * (1.0 - s * s / (3.0 * q.w * q.w))
    } else {
        2.0 * s.atan2(q.w) / s
    };
    Ok([q.x * factor, q.y * factor, q.z * factor])
}

/// Unit quaternion (with `w >= 0`) for an axis-angle vector of length at
/// most π.
pub fn expmap_decode(e: [f64; 3]) -> Quat {
    let theta = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let half = theta / 2.0;
    let k = if theta < 1e-8 {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    Quat::new(half.cos(), e[0] * k, e[1] * k, e[2] * k)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}
