//! Ground footprint of the calibration vehicle and the polygon containment loss.

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{RotationMatrix, Vec3};
use crate::types::{Timestamp, VehicleDims, VehiclePose};

/// Slack for the boundary-inclusive inside test, m².
pub const INSIDE_SLACK: f64 = 1e-9;

pub type Point2 = Vector2<f64>;

/// Counter-clockwise box corners in world coordinates: front-right,
/// front-left, rear-left, rear-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleFootprint {
    pub t: Timestamp,
    pub corners: [Point2; 4],
}

/// Distance used for points outside the footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMetric {
    /// Minimum distance to a corner.
    #[default]
    Vertex,
    /// Minimum distance to the polygon boundary.
    Edge,
}

/// Box center in world coordinates: reference point plus the yaw-rotated offset.
pub fn box_center(pose: &VehiclePose, dims: &VehicleDims) -> Vec3 {
    pose.position + RotationMatrix::rot_z(pose.rpy.yaw).apply(&dims.ref_offset)
}

pub fn vehicle_footprint(pose: &VehiclePose, dims: &VehicleDims) -> VehicleFootprint {
    let c = box_center(pose, dims);
    let rot = Rotation2::new(pose.rpy.yaw);
    let (hl, hw) = (dims.length / 2.0, dims.width / 2.0);
    let corner = |dx: f64, dy: f64| Point2::new(c.x, c.y) + rot * Point2::new(dx, dy);
    VehicleFootprint {
        t: pose.t,
        corners: [corner(hl, -hw), corner(hl, hw), corner(-hl, hw), corner(-hl, -hw)],
    }
}

fn cross(a: &Point2, b: &Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (a + ab * s - p).norm()
}

impl VehicleFootprint {
    pub fn signed_area(&self) -> f64 {
        (0..4).map(|i| cross(&self.corners[i], &self.corners[(i + 1) % 4])).sum::<f64>() / 2.0
    }

    /// Boundary-inclusive containment for the convex, counter-clockwise polygon.
    pub fn contains(&self, p: &Point2) -> bool {
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            cross(&(b - a), &(p - a)) >= -INSIDE_SLACK
        })
    }

    pub fn nearest_corner(&self, p: &Point2) -> Point2 {
        *self
            .corners
            .iter()
            .min_by(|a, b| (*a - p).norm_squared().total_cmp(&(*b - p).norm_squared()))
            .expect("four corners")
    }

    pub fn translated(&self, u: &Point2) -> Self {
        Self {
            t: self.t,
            corners: self.corners.map(|c| c + u),
        }
    }
}

/// Zero inside or on the footprint; outside, the distance to the nearest corner
/// (or edge, with [`LossMetric::Edge`]).
pub fn polygon_loss(p: &Point2, fp: &VehicleFootprint, metric: LossMetric) -> f64 {
    if fp.contains(p) {
        return 0.0;
    }
    match metric {
        LossMetric::Vertex => fp.corners.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min),
        LossMetric::Edge => (0..4)
            .map(|i| segment_distance(p, &fp.corners[i], &fp.corners[(i + 1) % 4]))
            .fold(f64::INFINITY, f64::min),
    }
}
