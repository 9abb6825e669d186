//! Second pass over the calibration: nearest-target/nearest-corner
//! correspondences, a yaw-and-translation refit, and a planar offset that
//! maximizes footprint containment.

pub mod footprint;
pub mod nelder_mead;

use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{target, ObjectTrack, TargetRef};
use crate::geometry::{rotation_error_angle, Calibration, Vec3};
use crate::hypothesis::{estimate_yaw_transform, Correspondence, HypothesisError, RigidFit};
use crate::ingest::{PoseInterpolation, PoseTrack, DEFAULT_MAX_DT_US};
use crate::track::{smooth_points, TrackParams};
use crate::types::{RadarFrame, Timestamp, VehicleDims};

pub use footprint::{box_center, polygon_loss, vehicle_footprint, LossMetric, Point2, VehicleFootprint};
pub use nelder_mead::{nelder_mead, NelderMeadParams, NelderMeadResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("no track lies within {0} m of the calibration vehicle")]
    NoAcceptedTracks(f64),
    #[error("only {0} nearest-target correspondences, need 3")]
    InsufficientCorrespondences(usize),
    #[error(transparent)]
    Registration(#[from] HypothesisError),
    #[error("invalid refine parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    pub enabled: bool,
    /// Tracks whose mean horizontal offset from the vehicle box center is below
    /// this are used, m.
    pub accept_distance: f64,
    /// Rounds of nearest-target refit.
    pub max_rounds: usize,
    pub loss_metric: LossMetric,
    /// Smooth the nearest-target sequence with the tracking filter before refitting.
    pub smooth_nearest: bool,
    pub max_dt_us: i64,
    pub nm_initial_step: f64,
    pub nm_x_tol: f64,
    pub nm_f_tol: f64,
    pub nm_max_iter: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        let nm = NelderMeadParams::default();
        Self {
            enabled: true,
            accept_distance: 7.5,
            max_rounds: 5,
            loss_metric: LossMetric::Vertex,
            smooth_nearest: false,
            max_dt_us: DEFAULT_MAX_DT_US,
            nm_initial_step: nm.initial_step,
            nm_x_tol: nm.x_tol,
            nm_f_tol: nm.f_tol,
            nm_max_iter: nm.max_iter,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.accept_distance > 0.0) {
            return Err(RefineError::InvalidParams("accept_distance must be > 0"));
        }
        if !(self.nm_initial_step > 0.0 && self.nm_x_tol > 0.0 && self.nm_f_tol >= 0.0) {
            return Err(RefineError::InvalidParams("simplex step and tolerances must be positive"));
        }
        Ok(())
    }

    pub fn nelder_mead(&self) -> NelderMeadParams {
        NelderMeadParams {
            initial_step: self.nm_initial_step,
            x_tol: self.nm_x_tol,
            f_tol: self.nm_f_tol,
            max_iter: self.nm_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub calibration: Calibration,
    /// World-frame (dx, dy) added to the translation by the containment step.
    pub offset: Point2,
    /// Mean polygon loss of the held-in targets before and after refinement.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub rounds: usize,
    pub n_correspondences: usize,
    pub accepted_tracks: Vec<usize>,
    /// Refinement increased the loss; `calibration` is the input calibration.
    pub reverted: bool,
    pub optimizer_hit_cap: bool,
}

/// Newest-frame targets of a set of tracks, merged per frame and deduplicated.
pub fn merged_newest_targets<'a>(tracks: impl IntoIterator<Item = &'a ObjectTrack>) -> BTreeMap<usize, (Timestamp, Vec<TargetRef>)> {
    let mut out: BTreeMap<usize, (Timestamp, Vec<TargetRef>)> = BTreeMap::new();
    for tr in tracks {
        for obs in &tr.observations {
            let entry = out.entry(obs.frame).or_insert_with(|| (obs.t, Vec::new()));
            for m in obs.newest_members() {
                if !entry.1.contains(m) {
                    entry.1.push(*m);
                }
            }
        }
    }
    out
}

/// Mean horizontal distance between calibrated cluster centroids and the
/// vehicle box center, over observations with a pose. `None` without poses.
pub fn mean_box_offset(track: &ObjectTrack, calib: &Calibration, poses: &PoseTrack, dims: &VehicleDims, max_dt_us: i64) -> Option<f64> {
    let d: Vec<f64> = track
        .observations
        .iter()
        .filter_map(|o| {
            let pose = poses.pose_at(o.t, max_dt_us, PoseInterpolation::Linear).ok()?;
            let c = calib.apply(&o.centroid) - box_center(&pose, dims);
            Some(c.xy().norm())
        })
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

fn accepted<'a>(
    tracks: &'a [ObjectTrack],
    calib: &Calibration,
    poses: &PoseTrack,
    dims: &VehicleDims,
    params: &RefineParams,
) -> Vec<&'a ObjectTrack> {
    tracks
        .iter()
        .filter(|t| mean_box_offset(t, calib, poses, dims, params.max_dt_us).is_some_and(|d| d < params.accept_distance))
        .collect()
}

/// Per merged timestamp: the target nearest to the estimated sensor position
/// (horizontally, calibration applied) paired with the footprint corner nearest
/// to that position, at box-center height. Sensor side is the leveled raw point.
pub fn nearest_target_correspondences(
    frames: &[RadarFrame],
    calib: &Calibration,
    tracks: &[&ObjectTrack],
    poses: &PoseTrack,
    dims: &VehicleDims,
    max_dt_us: i64,
) -> Vec<Correspondence> {
    let sensor = calib.sensor_position().xy();
    merged_newest_targets(tracks.iter().copied())
        .into_values()
        .filter_map(|(t, refs)| {
            let pose = poses.pose_at(t, max_dt_us, PoseInterpolation::Linear).ok()?;
            let nearest = refs
                .iter()
                .map(|r| target(frames, r).position)
                .min_by(|a, b| {
                    let da = (calib.apply(a).xy() - sensor).norm();
                    let db = (calib.apply(b).xy() - sensor).norm();
                    da.total_cmp(&db)
                })?;
            let fp = vehicle_footprint(&pose, dims);
            let corner = fp.nearest_corner(&sensor);
            let z = box_center(&pose, dims).z;
            Some(Correspondence::new(t, calib.leveling.apply(&nearest), Vec3::new(corner.x, corner.y, z)))
        })
        .collect()
}

/// Replaces the sensor-side (x, y) by smoothed values along runs of consecutive
/// correspondences; runs shorter than the track minimum are left as they are.
fn smooth_correspondences(corrs: &mut [Correspondence], params: &TrackParams) {
    const MAX_GAP_US: i64 = 500_000;
    let mut start = 0;
    while start < corrs.len() {
        let mut end = start + 1;
        while end < corrs.len() && corrs[end].t.micros() - corrs[end - 1].t.micros() <= MAX_GAP_US {
            end += 1;
        }
        if end - start >= params.min_len {
            let run = &mut corrs[start..end];
            let times: Vec<Timestamp> = run.iter().map(|c| c.t).collect();
            let z: Vec<Vector2<f64>> = run.iter().map(|c| c.p_sensor_leveled.xy()).collect();
            match smooth_points(&times, &z, params) {
                Ok(out) => {
                    for (c, e) in run.iter_mut().zip(out.smoothed) {
                        c.p_sensor_leveled.x = e.state.x;
                        c.p_sensor_leveled.y = e.state.y;
                    }
                }
                Err(e) => warn!("nearest-target smoothing skipped: {e}"),
            }
        }
        start = end;
    }
}

/// Target world positions (x, y) paired with the footprint at their timestamp.
pub fn footprint_pairs(
    frames: &[RadarFrame],
    calib: &Calibration,
    tracks: &[&ObjectTrack],
    poses: &PoseTrack,
    dims: &VehicleDims,
    max_dt_us: i64,
) -> Vec<(Point2, VehicleFootprint)> {
    merged_newest_targets(tracks.iter().copied())
        .into_values()
        .filter_map(|(t, refs)| {
            let pose = poses.pose_at(t, max_dt_us, PoseInterpolation::Linear).ok()?;
            let fp = vehicle_footprint(&pose, dims);
            Some(refs.into_iter().map(move |r| (calib.apply(&target(frames, &r).position).xy(), fp)))
        })
        .flatten()
        .collect()
}

pub fn total_loss(pairs: &[(Point2, VehicleFootprint)], offset: &Point2, metric: LossMetric) -> f64 {
    pairs.par_iter().map(|(p, fp)| polygon_loss(&(p + offset), fp, metric)).sum()
}

/// Minimizes the summed polygon loss over a world-frame planar offset.
pub fn optimize_planar_offset(
    pairs: &[(Point2, VehicleFootprint)],
    init: Point2,
    metric: LossMetric,
    params: &NelderMeadParams,
) -> NelderMeadResult {
    // the vertex loss jumps where targets cross an edge, which can collapse the
    // simplex early; restart from the best point until it stops improving
    const MAX_RESTARTS: usize = 10;
    let f = |u: &Point2| total_loss(pairs, u, metric);
    let mut r = nelder_mead(f, init, params);
    for _ in 0..MAX_RESTARTS {
        if r.hit_cap {
            break;
        }
        let next = nelder_mead(f, r.x, params);
        let improved = next.f < r.f - params.f_tol;
        r = NelderMeadResult {
            iterations: r.iterations + next.iterations,
            ..if next.f <= r.f { next } else { r }
        };
        if !improved {
            break;
        }
    }
    if r.hit_cap {
        warn!("planar offset search stopped at the iteration cap ({})", params.max_iter);
    }
    r
}

const TRIM_FACTOR: f64 = 5.0;
const TRIM_FLOOR: f64 = 0.1;

/// Yaw fit that drops pairs with residual above `max(TRIM_FLOOR, TRIM_FACTOR ·
/// median)` and refits; a mispaired corner is off by a full vehicle side.
pub fn trimmed_yaw_fit(corrs: &[Correspondence]) -> Result<RigidFit, HypothesisError> {
    let mut fit = estimate_yaw_transform(corrs)?;
    let mut kept = corrs.to_vec();
    for _ in 0..3 {
        let res: Vec<f64> = kept
            .iter()
            .map(|c| (fit.rotation.apply(&c.p_sensor_leveled) + fit.translation - c.p_world).norm())
            .collect();
        let mut sorted = res.clone();
        sorted.sort_by(f64::total_cmp);
        let thr = (TRIM_FACTOR * sorted[sorted.len() / 2]).max(TRIM_FLOOR);
        let next: Vec<Correspondence> = kept.iter().zip(&res).filter(|(_, r)| **r <= thr).map(|(c, _)| *c).collect();
        if next.len() == kept.len() || next.len() < 3 {
            break;
        }
        debug!("refine: dropped {} of {} nearest-target pairs", kept.len() - next.len(), kept.len());
        kept = next;
        fit = estimate_yaw_transform(&kept)?;
    }
    Ok(fit)
}

fn mean_loss(pairs: &[(Point2, VehicleFootprint)], metric: LossMetric) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    total_loss(pairs, &Point2::zeros(), metric) / pairs.len() as f64
}

/// Refits yaw and translation from nearest-target correspondences (repeated
/// until the selected correspondences settle), then applies the planar offset.
/// The leveling rotation is kept.
pub fn refine_calibration(
    calib: &Calibration,
    frames: &[RadarFrame],
    tracks: &[ObjectTrack],
    poses: &PoseTrack,
    dims: &VehicleDims,
    params: &RefineParams,
    track_params: &TrackParams,
) -> Result<RefineOutcome, RefineError> {
    let held_in = accepted(tracks, calib, poses, dims, params);
    if held_in.is_empty() {
        return Err(RefineError::NoAcceptedTracks(params.accept_distance));
    }
    let initial_loss = mean_loss(&footprint_pairs(frames, calib, &held_in, poses, dims, params.max_dt_us), params.loss_metric);

    let mut cal = calib.clone();
    let mut rounds = 0;
    let mut n_corr = 0;
    let mut use_tracks = held_in.clone();
    for round in 0..params.max_rounds.max(1) {
        let mut corrs = nearest_target_correspondences(frames, &cal, &use_tracks, poses, dims, params.max_dt_us);
        if corrs.len() < 3 {
            if round == 0 {
                return Err(RefineError::InsufficientCorrespondences(corrs.len()));
            }
            break;
        }
        if params.smooth_nearest {
            smooth_correspondences(&mut corrs, track_params);
        }
        let fit = trimmed_yaw_fit(&corrs)?;
        let next = Calibration::new(fit.rotation, fit.translation, cal.leveling, cal.origin.clone());
        let d_rot = rotation_error_angle(&next.rotation, &cal.rotation);
        let d_t = (next.translation - cal.translation).norm();
        debug!("refine round {round}: {} pairs, rms {:.4} m, step {:.2e} rad / {:.2e} m", corrs.len(), fit.rms_residual, d_rot, d_t);
        cal = next;
        rounds = round + 1;
        n_corr = corrs.len();
        if d_rot < 1e-12 && d_t < 1e-9 {
            break;
        }
        let again = accepted(tracks, &cal, poses, dims, params);
        if !again.is_empty() {
            use_tracks = again;
        }
    }

    let pairs = footprint_pairs(frames, &cal, &use_tracks, poses, dims, params.max_dt_us);
    let nm = optimize_planar_offset(&pairs, Point2::zeros(), params.loss_metric, &params.nelder_mead());
    cal.translation.x += nm.x.x;
    cal.translation.y += nm.x.y;

    let final_loss = mean_loss(&footprint_pairs(frames, &cal, &held_in, poses, dims, params.max_dt_us), params.loss_metric);
    let reverted = final_loss > initial_loss + 1e-12;
    if reverted {
        warn!("refinement raised the mean polygon loss ({initial_loss:.4} -> {final_loss:.4} m); keeping the initial calibration");
    }
    Ok(RefineOutcome {
        calibration: if reverted { calib.clone() } else { cal },
        offset: nm.x,
        initial_loss,
        final_loss,
        rounds,
        n_correspondences: n_corr,
        accepted_tracks: use_tracks.iter().map(|t| t.id).collect(),
        reverted,
        optimizer_hit_cap: nm.hit_cap,
    })
}
