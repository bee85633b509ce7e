//! Unit vectors on the sphere and the planar (equatorial) special case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm tolerance for the unit-vector invariant.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Tolerance for treating a setting as lying in the z = 0 plane.
pub const PLANAR_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("vector ({0}, {1}, {2}) is not unit length")]
    NotUnit(f64, f64, f64),
    #[error("cannot normalize a (near-)zero vector")]
    ZeroVector,
    #[error("setting ({0}, {1}, {2}) is not in the z = 0 plane")]
    NotPlanar(f64, f64, f64),
}

/// A direction on the unit sphere. Houses measurement settings and the
/// hidden-variable arrow alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVector3 {
    /// Builds from components, enforcing unit norm within `UNIT_NORM_TOL`.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeomError> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > 16.0 * UNIT_NORM_TOL {
            return Err(GeomError::NotUnit(x, y, z));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self, GeomError> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(GeomError::ZeroVector);
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Spherical angles: `theta` polar (from +z), `phi` azimuthal.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            x: st * cp,
            y: st * sp,
            z: ct,
        }
    }

    /// In-plane direction at azimuth `alpha` (radians), z = 0.
    pub fn from_planar_angle(alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        Self { x: c, y: s, z: 0.0 }
    }

    /// In-plane direction given in degrees.
    pub fn from_planar_degrees(deg: f64) -> Self {
        Self::from_planar_angle(deg.to_radians())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Azimuth in the xy-plane, atan2 convention.
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Angle to another unit vector, in [0, pi].
    pub fn angle_to(&self, other: &Self) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    pub fn is_planar(&self) -> bool {
        self.z.abs() <= PLANAR_TOL
    }

    pub fn require_planar(&self) -> Result<(), GeomError> {
        if self.is_planar() {
            Ok(())
        } else {
            Err(GeomError::NotPlanar(self.x, self.y, self.z))
        }
    }

    /// Two unit vectors completing `self` to a right-handed orthonormal frame.
    pub fn orthonormal_basis(&self) -> (Self, Self) {
        // Pick the axis least aligned with self to seed the cross products.
        let helper = if self.z.abs() < 0.9 {
            Self { x: 0.0, y: 0.0, z: 1.0 }
        } else {
            Self { x: 1.0, y: 0.0, z: 0.0 }
        };
        let u = Self::normalized(
            helper.y * self.z - helper.z * self.y,
            helper.z * self.x - helper.x * self.z,
            helper.x * self.y - helper.y * self.x,
        )
        .expect("helper is never parallel to self");
        let v = Self {
            x: self.y * u.z - self.z * u.y,
            y: self.z * u.x - self.x * u.z,
            z: self.x * u.y - self.y * u.x,
        };
        (u, v)
    }
}

/// Sign with the fixed tie-break sign(0) := +1, so serial and parallel runs
/// agree bit-exactly on the measure-zero tie.
pub fn sign_plus(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}
