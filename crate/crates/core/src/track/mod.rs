//! Bird's-eye projection of leveled cluster centers and UKF/RTS smoothing of
//! each object track.

pub mod ctra;
pub mod ukf;

use nalgebra::{Matrix6, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ObjectTrack;
use crate::geometry::{RotationMatrix, Vec3};
use crate::types::Timestamp;

pub use ctra::{ctra_predict, CtraState};
pub use ukf::{smooth_points, Estimate, SmootherOutput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("track too short: {len} observations, need {min}")]
    TooShort { len: usize, min: usize },
    #[error("covariance lost positive semi-definiteness at t={0}")]
    NumericalFailure(Timestamp),
    #[error("invalid track parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackParams {
    /// Jerk noise density, m/s³.
    pub sigma_jerk: f64,
    /// Turn acceleration noise density, rad/s².
    pub sigma_yaw_acc: f64,
    /// Measurement noise per axis, m.
    pub sigma_meas: f64,
    pub min_len: usize,
    pub ukf_alpha: f64,
    pub ukf_beta: f64,
    pub ukf_kappa: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            sigma_jerk: 2.0,
            sigma_yaw_acc: 0.5,
            sigma_meas: 0.5,
            min_len: 5,
            ukf_alpha: 1e-3 * 3f64.sqrt(),
            ukf_beta: 2.0,
            ukf_kappa: 0.0,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.sigma_jerk > 0.0 && self.sigma_yaw_acc > 0.0 && self.sigma_meas > 0.0) {
            return Err(TrackError::InvalidParams("noise levels must be > 0"));
        }
        if self.min_len < 2 {
            return Err(TrackError::InvalidParams("min_len must be >= 2"));
        }
        if !(self.ukf_alpha > 0.0 && self.ukf_alpha <= 1.0) {
            return Err(TrackError::InvalidParams("ukf_alpha must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Smoothed planar states of one track, one per source observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrack {
    pub id: usize,
    pub states: Vec<(Timestamp, CtraState, Matrix6<f64>)>,
    /// Leveled cluster centroids before smoothing (z retained).
    pub leveled_centroids: Vec<Vec3>,
    /// Id of the originating [`ObjectTrack`].
    pub source_id: usize,
}

impl SmoothedTrack {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Levels the centroids of `track`, drops z, and runs the UKF + RTS smoother.
pub fn smooth_track(track: &ObjectTrack, leveling: &RotationMatrix, params: &TrackParams) -> Result<SmoothedTrack, TrackError> {
    if track.len() < params.min_len {
        return Err(TrackError::TooShort {
            len: track.len(),
            min: params.min_len,
        });
    }
    let leveled: Vec<Vec3> = track.observations.iter().map(|o| leveling.apply(&o.centroid)).collect();
    let times: Vec<Timestamp> = track.observations.iter().map(|o| o.t).collect();
    let z: Vec<Vector2<f64>> = leveled.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let out = smooth_points(&times, &z, params)?;
    Ok(SmoothedTrack {
        id: track.id,
        states: out.smoothed.into_iter().map(|e| (e.t, e.state, e.cov)).collect(),
        leveled_centroids: leveled,
        source_id: track.id,
    })
}

/// Smooths every track long enough, in parallel. Tracks that fail numerically
/// are reported alongside the successes, in input order.
pub fn smooth_tracks(
    tracks: &[ObjectTrack],
    leveling: &RotationMatrix,
    params: &TrackParams,
) -> Vec<(usize, Result<SmoothedTrack, TrackError>)> {
    tracks
        .par_iter()
        .filter(|t| t.len() >= params.min_len)
        .map(|t| (t.id, smooth_track(t, leveling, params)))
        .collect()
}
