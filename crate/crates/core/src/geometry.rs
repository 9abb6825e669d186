//! Rotations, rigid transforms and the sensor-to-world calibration type.
//!
//! Euler convention (fixed throughout the crate): `R = Rz(yaw) · Ry(pitch) · Rx(roll)`,
//! i.e. extrinsic x-y-z / intrinsic z-y'-x''. World frame is local-origin-shifted
//! UTM with z up.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Orthonormality / determinant tolerance for [`RotationMatrix`].
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("gimbal lock: |R31| = {0} too close to 1, Euler angles are not unique")]
    GimbalLock(f64),
    #[error("non-finite input")]
    NonFinite,
}

/// Roll / pitch / yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const ZERO: Self = Self {
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }
}

/// A proper rotation matrix (`RᵀR = I`, `det R = 1` within [`ROTATION_TOL`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and determinant.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho >= ROTATION_TOL || (det - 1.0).abs() >= ROTATION_TOL {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a rotation (products of rotations, SVD outputs).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an approximately orthonormal matrix onto SO(3).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn from_euler(e: EulerAngles) -> Self {
        euler_to_rotation(e.roll, e.pitch, e.yaw)
    }

    pub fn to_euler(&self) -> Result<EulerAngles, GeometryError> {
        rotation_to_euler(self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle of `selfᵀ · other`, see [`rotation_error_angle`].
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        rotation_error_angle(self, other)
    }

    /// Unit quaternion `[w, x, y, z]` with `w ≥ 0`.
    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.0);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Result<Self, GeometryError> {
        if q.iter().any(|v| !v.is_finite()) || q.iter().all(|v| *v == 0.0) {
            return Err(GeometryError::NonFinite);
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Ok(Self(uq.to_rotation_matrix().into_inner()))
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for &RotationMatrix {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_to_rotation(roll: f64, pitch: f64, yaw: f64) -> RotationMatrix {
    let (sa, ca) = roll.sin_cos();
    let (sb, cb) = pitch.sin_cos();
    let (sg, cg) = yaw.sin_cos();
    RotationMatrix(Matrix3::new(
        cg * cb,
        cg * sb * sa - sg * ca,
        cg * sb * ca + sg * sa,
        sg * cb,
        sg * sb * sa + cg * ca,
        sg * sb * ca - cg * sa,
        -sb,
        cb * sa,
        cb * ca,
    ))
}

/// Inverse of [`euler_to_rotation`]; pitch is returned in (−π/2, π/2).
pub fn rotation_to_euler(r: &RotationMatrix) -> Result<EulerAngles, GeometryError> {
    let m = &r.0;
    let r31 = m[(2, 0)];
    if r31.abs() >= 1.0 - ROTATION_TOL {
        return Err(GeometryError::GimbalLock(r31.abs()));
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let pitch = (-r31).atan2(m[(2, 1)].hypot(m[(2, 2)]));
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(EulerAngles { roll, pitch, yaw })
}

/// Angle of the axis-angle form of `R_jᵀ · R_i`, in [0, π].
pub fn rotation_error_angle(r_i: &RotationMatrix, r_j: &RotationMatrix) -> f64 {
    let rel = r_j.0.transpose() * r_i.0;
    // same value as acos((tr − 1)/2), but accurate near 0 and π
    let cos = (rel.trace() - 1.0) / 2.0;
    let sin = Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm() / 2.0;
    sin.atan2(cos)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// UTM zone plus the whole-meter easting/northing that local coordinates are shifted by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtmOrigin {
    pub zone: String,
    pub easting: f64,
    pub northing: f64,
}

impl UtmOrigin {
    pub fn new(zone: impl Into<String>, easting: f64, northing: f64) -> Self {
        Self {
            zone: zone.into(),
            easting,
            northing,
        }
    }

    /// Origin for a first sample: its position rounded down to whole meters.
    pub fn floor_of(zone: impl Into<String>, easting: f64, northing: f64) -> Self {
        Self::new(zone, easting.floor(), northing.floor())
    }
}

/// Sensor-to-world extrinsic calibration: `p_world = R · p_sensor + t`.
///
/// `rotation` is the full rotation, composed as `R_registration · R_level`, where
/// `leveling` removes the sensor roll and pitch relative to the road plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub leveling: RotationMatrix,
    pub origin: UtmOrigin,
}

impl Calibration {
    pub fn new(
        registration: RotationMatrix,
        translation: Vec3,
        leveling: RotationMatrix,
        origin: UtmOrigin,
    ) -> Self {
        Self {
            rotation: registration * leveling,
            translation,
            leveling,
            origin,
        }
    }

    pub fn apply(&self, p_sensor: &Vec3) -> Vec3 {
        apply_calibration(self, p_sensor)
    }

    /// The part of the rotation estimated from correspondences (`R · R_levelᵀ`).
    pub fn registration(&self) -> RotationMatrix {
        RotationMatrix::from_matrix_unchecked(self.rotation.0 * self.leveling.0.transpose())
    }

    pub fn rpy(&self) -> Result<EulerAngles, GeometryError> {
        self.rotation.to_euler()
    }

    /// Sensor position in local world coordinates.
    pub fn sensor_position(&self) -> Vec3 {
        self.translation
    }

    /// Same calibration expressed relative to a different local origin.
    pub fn rebased(&self, origin: &UtmOrigin) -> Calibration {
        let shift = Vec3::new(
            self.origin.easting - origin.easting,
            self.origin.northing - origin.northing,
            0.0,
        );
        Calibration {
            translation: self.translation + shift,
            origin: origin.clone(),
            ..self.clone()
        }
    }
}

/// `R · p_sensor + t`.
pub fn apply_calibration(c: &Calibration, p_sensor: &Vec3) -> Vec3 {
    c.rotation.0 * p_sensor + c.translation
}
