//! Footprint-containment metrics of a calibration on a held-out session.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{target, ObjectTrack, TargetRef};
use crate::geometry::Calibration;
use crate::ingest::{PoseInterpolation, PoseTrack, DEFAULT_MAX_DT_US};
use crate::refine::{box_center, merged_newest_targets, polygon_loss, vehicle_footprint, LossMetric, Point2};
use crate::types::{RadarFrame, Timestamp, VehicleDims};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no track within {0} m of the calibration vehicle")]
    NoAcceptedTracks(f64),
    #[error("no evaluable targets in the accepted tracks")]
    NoTargets,
    #[error("invalid eval parameter: {0}")]
    InvalidParams(&'static str),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// Tracks with a mean centroid-to-pose distance at or above this are rejected, m.
    pub reject_threshold: f64,
    /// Targets higher than `height + height_margin` above the box bottom are ignored, m.
    pub height_margin: f64,
    pub max_dt_us: i64,
    pub loss_metric: LossMetric,
    /// Targets within this distance of the footprint edge count as inside, m.
    /// Absorbs localization/interpolation error for reflections on the hull.
    pub inside_tolerance: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            reject_threshold: 5.0,
            height_margin: 0.5,
            max_dt_us: DEFAULT_MAX_DT_US,
            loss_metric: LossMetric::Vertex,
            inside_tolerance: 0.01,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.reject_threshold > 0.0) {
            return Err(EvalError::InvalidParams("reject_threshold must be > 0"));
        }
        if !(self.inside_tolerance >= 0.0 && self.inside_tolerance.is_finite()) {
            return Err(EvalError::InvalidParams("inside_tolerance must be finite and >= 0"));
        }
        if !(self.height_margin >= 0.0) {
            return Err(EvalError::InvalidParams("height_margin must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetDiagnostic {
    pub t: Timestamp,
    pub track_id: usize,
    /// Distance from the sensor, m.
    pub range: f64,
    pub inside: bool,
    pub loss: f64,
    /// Set on the nearest-to-sensor target of each timestamp.
    pub delta_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub r_i: f64,
    pub delta_op: f64,
    pub delta_p: f64,
    pub n_targets: usize,
    pub n_inliers: usize,
    pub per_target: Vec<TargetDiagnostic>,
}

#[derive(Serialize)]
struct MetricsJson {
    r_i_pct: f64,
    delta_op_m: f64,
    delta_p_m: f64,
    n_targets: usize,
    n_inliers: usize,
}

/// Mean 3D distance between calibrated cluster centroids and the localization
/// point, over observations with a pose.
pub fn mean_pose_offset(track: &ObjectTrack, calib: &Calibration, poses: &PoseTrack, max_dt_us: i64) -> Option<f64> {
    let d: Vec<f64> = track
        .observations
        .iter()
        .filter_map(|o| {
            let pose = poses.pose_at(o.t, max_dt_us, PoseInterpolation::Linear).ok()?;
            Some((calib.apply(&o.centroid) - pose.position).norm())
        })
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Keeps tracks whose mean offset is strictly below `reject_threshold`.
pub fn associate_eval_tracks<'a>(
    tracks: &'a [ObjectTrack],
    poses: &PoseTrack,
    calib: &Calibration,
    reject_threshold: f64,
    max_dt_us: i64,
) -> Result<Vec<&'a ObjectTrack>, EvalError> {
    let accepted: Vec<&ObjectTrack> = tracks
        .iter()
        .filter(|t| mean_pose_offset(t, calib, poses, max_dt_us).is_some_and(|d| d < reject_threshold))
        .collect();
    if accepted.is_empty() {
        return Err(EvalError::NoAcceptedTracks(reject_threshold));
    }
    Ok(accepted)
}

/// Containment metrics over the unique newest-frame targets of the accepted
/// tracks, merged per timestamp.
pub fn compute_metrics(
    accepted: &[&ObjectTrack],
    frames: &[RadarFrame],
    poses: &PoseTrack,
    dims: &VehicleDims,
    calib: &Calibration,
    params: &EvalParams,
) -> Result<Metrics, EvalError> {
    // first track contributing each target, for the diagnostics
    let owner = |r: &TargetRef| {
        accepted
            .iter()
            .find(|t| t.observations.iter().any(|o| o.frame == r.frame && o.members.contains(r)))
            .map_or(0, |t| t.id)
    };
    let sensor = calib.sensor_position().xy();
    let mut rows = Vec::new();
    let mut delta_ps = Vec::new();
    for (t, refs) in merged_newest_targets(accepted.iter().copied()).into_values() {
        let Ok(pose) = poses.pose_at(t, params.max_dt_us, PoseInterpolation::Linear) else {
            continue;
        };
        let fp = vehicle_footprint(&pose, dims);
        let bottom = box_center(&pose, dims).z - dims.height / 2.0;
        let mut frame_rows: Vec<(TargetDiagnostic, Point2)> = Vec::new();
        for r in &refs {
            let p_s = target(frames, r).position;
            let w = calib.apply(&p_s);
            if (w.z - bottom).abs() >= dims.height + params.height_margin {
                continue;
            }
            let p = w.xy();
            let loss = polygon_loss(&p, &fp, params.loss_metric);
            frame_rows.push((
                TargetDiagnostic {
                    t,
                    track_id: owner(r),
                    range: p_s.norm(),
                    inside: fp.contains(&p) || polygon_loss(&p, &fp, LossMetric::Edge) <= params.inside_tolerance,
                    loss,
                    delta_p: None,
                },
                p,
            ));
        }
        if let Some(k) = (0..frame_rows.len()).min_by(|&a, &b| {
            (frame_rows[a].1 - sensor).norm().total_cmp(&(frame_rows[b].1 - sensor).norm())
        }) {
            let d = (frame_rows[k].1 - fp.nearest_corner(&sensor)).norm();
            frame_rows[k].0.delta_p = Some(d);
            delta_ps.push(d);
        }
        rows.extend(frame_rows.into_iter().map(|(d, _)| d));
    }
    if rows.is_empty() {
        return Err(EvalError::NoTargets);
    }
    let n_targets = rows.len();
    let n_inliers = rows.iter().filter(|r| r.inside).count();
    let outside: Vec<f64> = rows.iter().filter(|r| !r.inside).map(|r| r.loss).collect();
    Ok(Metrics {
        r_i: 100.0 * n_inliers as f64 / n_targets as f64,
        delta_op: if outside.is_empty() { 0.0 } else { outside.iter().sum::<f64>() / outside.len() as f64 },
        delta_p: delta_ps.iter().sum::<f64>() / delta_ps.len().max(1) as f64,
        n_targets,
        n_inliers,
        per_target: rows,
    })
}

pub fn metrics_json(m: &Metrics) -> String {
    serde_json::to_string_pretty(&MetricsJson {
        r_i_pct: m.r_i,
        delta_op_m: m.delta_op,
        delta_p_m: m.delta_p,
        n_targets: m.n_targets,
        n_inliers: m.n_inliers,
    })
    .expect("plain struct serializes")
}

/// `t_us,track_id,range_m,inside,loss_m,delta_p_m`, one row per evaluated target.
pub fn write_diagnostics(m: &Metrics, w: impl Write) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["t_us", "track_id", "range_m", "inside", "loss_m", "delta_p_m"])?;
    for r in &m.per_target {
        csv.write_record([
            r.t.micros().to_string(),
            r.track_id.to_string(),
            format!("{:.4}", r.range),
            (r.inside as u8).to_string(),
            format!("{:.4}", r.loss),
            r.delta_p.map(|d| format!("{d:.4}")).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
