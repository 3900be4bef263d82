use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Attitude quaternion stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation by `yaw` radians about +z.
    pub fn from_yaw(yaw: T) -> Self {
        let half = yaw / T::of(2.0);
        Self::new(half.cos(), T::zero(), T::zero(), half.sin())
    }

    /// Rotation by `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let half = angle / T::of(2.0);
        let s = half.sin() / n;
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Unit-norm tolerance: 1e-9, widened to a few ulps for `f32`.
    pub fn unit_tolerance() -> T {
        T::of(1e-9).max(T::epsilon() * T::of(8.0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || (n - T::one()).abs() > Self::unit_tolerance() {
            return Err(Error::invalid(format!(
                "attitude quaternion must be unit length, |q| = {n}"
            )));
        }
        Ok(())
    }

    /// Applies the rotation to `v` (`q v q*`).
    pub fn rotate(&self, v: [T; 3]) -> [T; 3] {
        let two = T::of(2.0);
        let (w, qx, qy, qz) = (self.w, self.x, self.y, self.z);
        // t = 2 (q_vec x v)
        let tx = two * (qy * v[2] - qz * v[1]);
        let ty = two * (qz * v[0] - qx * v[2]);
        let tz = two * (qx * v[1] - qy * v[0]);
        [
            v[0] + w * tx + (qy * tz - qz * ty),
            v[1] + w * ty + (qz * tx - qx * tz),
            v[2] + w * tz + (qx * ty - qy * tx),
        ]
    }

    pub fn inverse_rotate(&self, v: [T; 3]) -> [T; 3] {
        self.conjugate().rotate(v)
    }

    pub fn cast<U: Real>(&self) -> Quaternion<U> {
        Quaternion::new(U::of(self.w.f64()), U::of(self.x.f64()), U::of(self.y.f64()), U::of(self.z.f64()))
    }
}

/// Sensor pose: position in meters and attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: [T; 3],
    pub attitude: Quaternion<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self { position: [T::zero(); 3], attitude: Quaternion::identity() }
    }

    pub fn new(position: [T; 3], attitude: Quaternion<T>) -> Result<Self> {
        let pose = Self { position, attitude };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("pose position must be finite"));
        }
        self.attitude.validate()
    }

    /// Sensor frame to world frame.
    pub fn to_world(&self, p: [T; 3]) -> [T; 3] {
        let r = self.attitude.rotate(p);
        [r[0] + self.position[0], r[1] + self.position[1], r[2] + self.position[2]]
    }

    /// World frame to sensor frame.
    pub fn to_sensor(&self, p: [T; 3]) -> [T; 3] {
        self.attitude.inverse_rotate([
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ])
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            position: self.position.map(|c| U::of(c.f64())),
            attitude: self.attitude.cast(),
        }
    }
}
