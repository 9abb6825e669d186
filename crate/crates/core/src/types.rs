//! Measurement and vehicle domain types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EulerAngles, Vec3};

/// Microseconds since epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn micros(self) -> i64 {
        self.0
    }

    /// Signed difference `self − earlier` in seconds.
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 * 1e-6
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("timestamp must be strictly positive, got {0}")]
    NonPositiveTime(i64),
    #[error("target position must be finite with non-zero range")]
    InvalidPosition,
    #[error("radial velocity must be finite")]
    InvalidVelocity,
    #[error("vehicle dimensions must be positive")]
    InvalidDims,
}

/// One radar detection in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarTarget {
    pub t: Timestamp,
    pub position: Vec3,
    /// Radial velocity, m/s, positive when receding.
    pub v_rad: f64,
    /// Radar cross-section in dBsm, if reported.
    pub rcs: Option<f64>,
}

impl RadarTarget {
    pub fn new(t: Timestamp, position: Vec3, v_rad: f64, rcs: Option<f64>) -> Result<Self, TypeError> {
        if t.0 <= 0 {
            return Err(TypeError::NonPositiveTime(t.0));
        }
        if position.iter().any(|v| !v.is_finite()) || position.norm() <= 0.0 {
            return Err(TypeError::InvalidPosition);
        }
        if !v_rad.is_finite() {
            return Err(TypeError::InvalidVelocity);
        }
        Ok(Self {
            t,
            position,
            v_rad,
            rcs,
        })
    }

    pub fn range(&self) -> f64 {
        self.position.norm()
    }
}

/// All targets of one radar scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarFrame {
    pub t: Timestamp,
    pub targets: Vec<RadarTarget>,
}

impl RadarFrame {
    pub fn new(t: Timestamp, targets: Vec<RadarTarget>) -> Self {
        debug_assert!(targets.iter().all(|tg| tg.t == t));
        Self { t, targets }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Geo-referenced pose of the localization reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub t: Timestamp,
    /// Easting, northing, altitude in local-origin-shifted UTM meters.
    pub position: Vec3,
    pub rpy: EulerAngles,
}

/// Vehicle bounding box relative to the localization reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Reference point → box center, vehicle frame (x forward, y left, z up).
    pub ref_offset: Vec3,
}

impl VehicleDims {
    pub fn new(length: f64, width: f64, height: f64, ref_offset: Vec3) -> Result<Self, TypeError> {
        let dims = Self {
            length,
            width,
            height,
            ref_offset,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        let ok = [self.length, self.width, self.height]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.ref_offset.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(TypeError::InvalidDims)
        }
    }
}

impl Default for VehicleDims {
    /// A mid-size passenger car referenced at the rear-axle center.
    fn default() -> Self {
        Self {
            length: 4.7,
            width: 1.85,
            height: 1.5,
            ref_offset: Vec3::new(1.4, 0.0, 0.45),
        }
    }
}
