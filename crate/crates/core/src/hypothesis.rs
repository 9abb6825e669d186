//! Per-track calibration hypotheses: sensor/world correspondences, closed-form
//! rigid registration, clustering by translation and selection by rotation
//! consistency.

use log::warn;
use nalgebra::{Matrix3, Matrix3xX, Matrix4, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::dbscan::{dbscan, group_labels};
use crate::geometry::{rotation_error_angle, Calibration, RotationMatrix, UtmOrigin, Vec3};
use crate::ingest::{PoseInterpolation, PoseTrack, DEFAULT_MAX_DT_US};
use crate::track::SmoothedTrack;
use crate::types::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("insufficient overlap: {0} correspondences, need 3")]
    InsufficientOverlap(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("insufficient consistent passes: no hypothesis cluster with at least {min_pts} members among {n} hypotheses")]
    InsufficientPasses { n: usize, min_pts: usize },
    #[error("invalid hypothesis parameter: {0}")]
    InvalidParams(&'static str),
}

/// Source of the sensor-side height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ElevationMode {
    /// Sensor-side points lie in the leveled plane z = 0.
    #[default]
    Zero,
    /// Leveled centroid height before smoothing.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisParams {
    pub elevation_mode: ElevationMode,
    /// DBSCAN radius over hypothesis translations, m.
    pub eps_t: f64,
    pub min_pts: usize,
    /// Reject a hypothesis when s1/s2 of the centered sensor points exceeds this.
    pub degeneracy_ratio: f64,
    /// Maximum sensor/pose time offset, µs.
    pub max_dt_us: i64,
    /// Weight correspondences by inverse position variance of the smoothed state.
    pub covariance_weights: bool,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        Self {
            elevation_mode: ElevationMode::Zero,
            eps_t: 1.0,
            min_pts: 2,
            degeneracy_ratio: 100.0,
            max_dt_us: DEFAULT_MAX_DT_US,
            covariance_weights: false,
        }
    }
}

impl HypothesisParams {
    pub fn validate(&self) -> Result<(), HypothesisError> {
        if !(self.eps_t > 0.0) {
            return Err(HypothesisError::InvalidParams("eps_t must be > 0"));
        }
        if self.min_pts < 1 {
            return Err(HypothesisError::InvalidParams("min_pts must be >= 1"));
        }
        if !(self.degeneracy_ratio > 1.0) {
            return Err(HypothesisError::InvalidParams("degeneracy_ratio must be > 1"));
        }
        if self.max_dt_us < 0 {
            return Err(HypothesisError::InvalidParams("max_dt_us must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub t: Timestamp,
    pub p_sensor_leveled: Vec3,
    pub p_world: Vec3,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(t: Timestamp, p_sensor_leveled: Vec3, p_world: Vec3) -> Self {
        Self {
            t,
            p_sensor_leveled,
            p_world,
            weight: 1.0,
        }
    }
}

/// Weighted least-squares rigid transform `p_w ≈ R p_s + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationHypothesis {
    pub track_id: usize,
    pub correspondences: Vec<Correspondence>,
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCluster {
    pub members: Vec<CalibrationHypothesis>,
    pub mean_t: Vec3,
    pub mean_pairwise_angle: f64,
}

impl HypothesisCluster {
    pub fn new(members: Vec<CalibrationHypothesis>) -> Self {
        let n = members.len();
        let mean_t = members.iter().map(|h| h.translation).sum::<Vec3>() / n.max(1) as f64;
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += rotation_error_angle(&members[i].rotation, &members[j].rotation);
                pairs += 1;
            }
        }
        Self {
            members,
            mean_t,
            mean_pairwise_angle: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        }
    }

    pub fn mean_rms(&self) -> f64 {
        self.members.iter().map(|h| h.rms_residual).sum::<f64>() / self.members.len().max(1) as f64
    }
}

/// RMS of `‖R p_s + t − p_w‖` (unweighted).
pub fn rms_residual(corrs: &[Correspondence], r: &RotationMatrix, t: &Vec3) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    (corrs
        .iter()
        .map(|c| (r.apply(&c.p_sensor_leveled) + t - c.p_world).norm_squared())
        .sum::<f64>()
        / corrs.len() as f64)
        .sqrt()
}

/// Pairs each smoothed state with the vehicle reference point at the same time.
/// States without a pose within `max_dt_us` are skipped.
pub fn build_correspondences(
    track: &SmoothedTrack,
    poses: &PoseTrack,
    mode: ElevationMode,
    max_dt_us: i64,
) -> Result<Vec<Correspondence>, HypothesisError> {
    build_weighted_correspondences(track, poses, mode, max_dt_us, false)
}

pub fn build_weighted_correspondences(
    track: &SmoothedTrack,
    poses: &PoseTrack,
    mode: ElevationMode,
    max_dt_us: i64,
    covariance_weights: bool,
) -> Result<Vec<Correspondence>, HypothesisError> {
    let pos_var: Vec<f64> = track.states.iter().map(|(_, _, p)| p[(0, 0)] + p[(1, 1)]).collect();
    let min_var = pos_var.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(track.len());
    for (k, (t, s, _)) in track.states.iter().enumerate() {
        let Ok(pose) = poses.pose_at(*t, max_dt_us, PoseInterpolation::Linear) else {
            continue;
        };
        let z = match mode {
            ElevationMode::Zero => 0.0,
            ElevationMode::Raw => track.leveled_centroids[k].z,
        };
        let mut c = Correspondence::new(*t, Vec3::new(s.x, s.y, z), pose.position);
        if covariance_weights && pos_var[k] > 0.0 {
            c.weight = (min_var / pos_var[k]).clamp(f64::MIN_POSITIVE, 1.0);
        }
        out.push(c);
    }
    if out.len() < 3 {
        return Err(HypothesisError::InsufficientOverlap(out.len()));
    }
    Ok(out)
}

fn weighted_centroids(corrs: &[Correspondence]) -> (Vec3, Vec3, f64) {
    let wsum: f64 = corrs.iter().map(|c| c.weight).sum();
    let cs = corrs.iter().map(|c| c.p_sensor_leveled * c.weight).sum::<Vec3>() / wsum;
    let cw = corrs.iter().map(|c| c.p_world * c.weight).sum::<Vec3>() / wsum;
    (cs, cw, wsum)
}

/// Sorted singular values of the centered sensor-side point set.
pub fn sensor_spread(corrs: &[Correspondence]) -> [f64; 3] {
    spread(corrs.iter().map(|c| c.p_sensor_leveled))
}

/// Singular values of the centered world-side points, descending.
pub fn world_spread(corrs: &[Correspondence]) -> [f64; 3] {
    spread(corrs.iter().map(|c| c.p_world))
}

fn spread(points: impl Iterator<Item = Vec3>) -> [f64; 3] {
    let points: Vec<Vec3> = points.collect();
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let m = Matrix3xX::from_columns(&points.iter().map(|p| p - c).collect::<Vec<_>>());
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    [s[0], s[1], s[2]]
}

/// Closed-form weighted registration (centroid subtraction, SVD of the cross
/// covariance, determinant sign correction, no scale).
pub fn estimate_rigid_transform(corrs: &[Correspondence]) -> Result<RigidFit, HypothesisError> {
    if corrs.len() < 3 {
        return Err(HypothesisError::InsufficientOverlap(corrs.len()));
    }
    if corrs.iter().any(|c| !(c.weight > 0.0) || !c.p_sensor_leveled.iter().chain(c.p_world.iter()).all(|v| v.is_finite())) {
        return Err(HypothesisError::Degenerate("non-finite point or non-positive weight".into()));
    }
    let spread = sensor_spread(corrs);
    if spread[0] <= 0.0 || spread[1] <= 1e-9 * spread[0] {
        return Err(HypothesisError::Degenerate("sensor-side points are collinear".into()));
    }
    let (cs, cw, _) = weighted_centroids(corrs);
    let mut h = Matrix3::zeros();
    for c in corrs {
        h += (c.p_sensor_leveled - cs) * (c.p_world - cw).transpose() * c.weight;
    }
    let svd = h.svd(false, false);
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    let rotation = horn_rotation(&h);
    // A proper rotation that cannot reach the unconstrained optimum had to give
    // up the weakest axis; ambiguous when the two weakest singular values tie.
    let trace = (rotation.matrix().transpose() * h.transpose()).trace();
    let forced_flip = trace < sv[0] + sv[1] + sv[2] - 1e-9 * sv[0];
    if forced_flip && sv[1] - sv[2] <= 1e-9 * sv[0] {
        return Err(HypothesisError::Degenerate("reflection cannot be resolved uniquely".into()));
    }
    let translation = cw - rotation.apply(&cs);
    Ok(RigidFit {
        rotation,
        translation,
        rms_residual: rms_residual(corrs, &rotation, &translation),
    })
}

/// Rotation maximising `tr(Rᵀ·Hᵀ)` for `H = Σ w·a·bᵀ`: the unit quaternion is the
/// dominant eigenvector of the symmetric 4x4 form of `H`.
fn horn_rotation(h: &Matrix3<f64>) -> RotationMatrix {
    let s = |i: usize, j: usize| h[(i, j)];
    let n = Matrix4::new(
        s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
        s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
        s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
        s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2),
    );
    let eig = SymmetricEigen::new(n);
    let k = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(k).normalize();
    RotationMatrix::from_quaternion_wxyz([q[0], q[1], q[2], q[3]]).expect("unit quaternion")
}

/// Registration restricted to a rotation about z plus a 3D translation.
pub fn estimate_yaw_transform(corrs: &[Correspondence]) -> Result<RigidFit, HypothesisError> {
    if corrs.is_empty() {
        return Err(HypothesisError::InsufficientOverlap(0));
    }
    let (cs, cw, _) = weighted_centroids(corrs);
    let (mut sc, mut ss) = (0.0, 0.0);
    for c in corrs {
        let a = c.p_sensor_leveled - cs;
        let b = c.p_world - cw;
        sc += c.weight * (a.x * b.x + a.y * b.y);
        ss += c.weight * (a.x * b.y - a.y * b.x);
    }
    if sc == 0.0 && ss == 0.0 {
        return Err(HypothesisError::Degenerate("no planar extent".into()));
    }
    let rotation = RotationMatrix::rot_z(ss.atan2(sc));
    let translation = cw - rotation.apply(&cs);
    Ok(RigidFit {
        rotation,
        translation,
        rms_residual: rms_residual(corrs, &rotation, &translation),
    })
}

/// Builds correspondences and a registration for one track, rejecting nearly
/// straight passes.
pub fn hypothesis_for_track(
    track: &SmoothedTrack,
    poses: &PoseTrack,
    params: &HypothesisParams,
) -> Result<CalibrationHypothesis, HypothesisError> {
    let corrs = build_weighted_correspondences(track, poses, params.elevation_mode, params.max_dt_us, params.covariance_weights)?;
    for (side, s) in [("sensor", sensor_spread(&corrs)), ("world", world_spread(&corrs))] {
        if s[1] <= 0.0 || s[0] / s[1] > params.degeneracy_ratio {
            return Err(HypothesisError::Degenerate(format!(
                "track {} is nearly straight on the {side} side (singular value ratio {:.1})",
                track.id,
                s[0] / s[1]
            )));
        }
    }
    let fit = estimate_rigid_transform(&corrs)?;
    // Both frames are z-up; an upside-down fit is a mirrored planar solution.
    if fit.rotation.matrix()[(2, 2)] <= 0.0 {
        return Err(HypothesisError::Degenerate(format!("track {} registers upside down (mirrored pass)", track.id)));
    }
    Ok(CalibrationHypothesis {
        track_id: track.id,
        correspondences: corrs,
        rotation: fit.rotation,
        translation: fit.translation,
        rms_residual: fit.rms_residual,
    })
}

/// One hypothesis per usable track, in input order. Rejected tracks are logged.
pub fn generate_hypotheses(tracks: &[SmoothedTrack], poses: &PoseTrack, params: &HypothesisParams) -> Vec<CalibrationHypothesis> {
    tracks
        .par_iter()
        .map(|t| hypothesis_for_track(t, poses, params))
        .collect::<Vec<_>>()
        .into_iter()
        .zip(tracks)
        .filter_map(|(h, t)| match h {
            Ok(h) => Some(h),
            Err(e) => {
                warn!("track {}: hypothesis rejected: {e}", t.id);
                None
            }
        })
        .collect()
}

/// DBSCAN over hypothesis translations; noise is discarded.
pub fn cluster_hypotheses(
    hyps: &[CalibrationHypothesis],
    eps_t: f64,
    min_pts: usize,
) -> Result<Vec<HypothesisCluster>, HypothesisError> {
    let labels = dbscan(hyps.len(), eps_t, min_pts, |i, j| (hyps[i].translation - hyps[j].translation).norm());
    let clusters: Vec<HypothesisCluster> = group_labels(&labels)
        .into_iter()
        .filter(|g| g.len() >= min_pts)
        .map(|g| HypothesisCluster::new(g.into_iter().map(|i| hyps[i].clone()).collect()))
        .collect();
    if clusters.is_empty() {
        return Err(HypothesisError::InsufficientPasses { n: hyps.len(), min_pts });
    }
    Ok(clusters)
}

const ANGLE_TIE: f64 = 1e-12;

/// Lowest mean pairwise rotation angle; ties go to the larger cluster, then to
/// the lower mean residual.
pub fn select_hypothesis_cluster(clusters: &[HypothesisCluster]) -> Option<&HypothesisCluster> {
    clusters.iter().reduce(|best, c| {
        let da = c.mean_pairwise_angle - best.mean_pairwise_angle;
        let better = if da.abs() <= ANGLE_TIE {
            c.members.len() > best.members.len()
                || (c.members.len() == best.members.len() && c.mean_rms() < best.mean_rms())
        } else {
            da < 0.0
        };
        if better {
            c
        } else {
            best
        }
    })
}

/// Re-registers all member correspondences jointly and composes the result with
/// the leveling rotation.
pub fn finalize_calibration(
    selected: &HypothesisCluster,
    leveling: &RotationMatrix,
    origin: &UtmOrigin,
) -> Result<(Calibration, RigidFit), HypothesisError> {
    let merged: Vec<Correspondence> = selected.members.iter().flat_map(|h| h.correspondences.iter().copied()).collect();
    let fit = estimate_rigid_transform(&merged)?;
    Ok((Calibration::new(fit.rotation, fit.translation, *leveling, origin.clone()), fit))
}
