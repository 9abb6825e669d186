//! Stage orchestration for `calibrate` and `evaluate`.

use std::fmt::Write as _;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::calibfile::CalibrationFile;
use crate::cluster::{associate_tracks, cluster_session, filter_moving, ObjectTrack};
use crate::config::PipelineConfig;
use crate::eval::{associate_eval_tracks, compute_metrics, EvalError, Metrics};
use crate::geometry::{Calibration, EulerAngles, RotationMatrix, Vec3};
use crate::groundplane::{estimate_ground, GroundError, GroundPlane};
use crate::hypothesis::{cluster_hypotheses, finalize_calibration, generate_hypotheses, HypothesisError};
use crate::ingest::{IngestError, RecordingSession};
use crate::refine::{refine_calibration, RefineError};
use crate::track::{smooth_tracks, TrackError};
use crate::types::RadarFrame;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("clustering: {0}")]
    Cluster(String),
    #[error("ground plane: {0}")]
    Ground(#[from] GroundError),
    #[error("tracking: {0}")]
    Track(#[from] TrackError),
    #[error("hypothesis: {0}")]
    Hypothesis(#[from] HypothesisError),
    #[error("refinement: {0}")]
    Refine(#[from] RefineError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Ingest(_) => "ingest",
            PipelineError::Cluster(_) => "cluster",
            PipelineError::Ground(_) => "groundplane",
            PipelineError::Track(_) => "track",
            PipelineError::Hypothesis(_) => "hypothesis",
            PipelineError::Refine(_) => "refine",
            PipelineError::Eval(_) => "eval",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Ingest(_) => 2,
            PipelineError::Cluster(_) => 3,
            PipelineError::Ground(_) => 4,
            PipelineError::Track(_) | PipelineError::Hypothesis(_) => 5,
            PipelineError::Refine(_) => 6,
            PipelineError::Eval(_) => 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoseSummary {
    pub t: [f64; 3],
    pub rpy_deg: [f64; 3],
}

impl PoseSummary {
    fn of(c: &Calibration) -> Self {
        Self {
            t: c.translation.into(),
            rpy_deg: c.rotation.to_euler().unwrap_or(EulerAngles::ZERO).to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundSummary {
    pub normal: [f64; 3],
    pub offset_m: f64,
    pub n_points: usize,
    pub leveling_rpy_deg: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisClusterRow {
    pub mean_t: [f64; 3],
    pub members: usize,
    pub track_ids: Vec<usize>,
    pub mean_angle_deg: f64,
    pub mean_rms_m: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineSummary {
    pub accepted_tracks: Vec<usize>,
    pub n_correspondences: usize,
    pub rounds: usize,
    pub offset_m: [f64; 2],
    pub initial_loss_m: f64,
    pub final_loss_m: f64,
    pub reverted: bool,
    pub optimizer_hit_cap: bool,
}

/// Machine-readable account of one `calibrate` run.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub n_frames: usize,
    pub n_targets: usize,
    pub n_moving_targets: usize,
    pub n_clusters: usize,
    pub n_tracks_3d: usize,
    pub ground: GroundSummary,
    pub n_tracks_leveled: usize,
    pub n_tracks_smoothed: usize,
    pub n_track_failures: usize,
    pub n_hypotheses: usize,
    pub hypothesis_clusters: Vec<HypothesisClusterRow>,
    pub unrefined: PoseSummary,
    pub residual_rms_m: f64,
    pub refine: Option<RefineSummary>,
    pub result: PoseSummary,
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub calibration: Calibration,
    pub unrefined: Calibration,
    pub residual_rms: f64,
    pub n_hypotheses: usize,
    /// Refinement ran and was kept.
    pub refined: bool,
    pub report: CalibrationReport,
}

impl CalibrationRun {
    pub fn calibration_file(&self) -> CalibrationFile {
        CalibrationFile::from_calibration(&self.calibration, self.residual_rms, self.n_hypotheses, self.refined)
    }
}

/// Moving targets only, one frame per input frame.
pub fn moving_frames(frames: &[RadarFrame], v_min: f64) -> Vec<RadarFrame> {
    frames.iter().map(|f| filter_moving(f, v_min)).collect()
}

/// Clusters the moving frames and associates in 3D (`leveling = None`) or on
/// the leveled plane.
fn tracks_from(
    moving: &[RadarFrame],
    cfg: &PipelineConfig,
    leveling: Option<&RotationMatrix>,
) -> Result<(usize, Vec<ObjectTrack>), PipelineError> {
    cfg.cluster.validate().map_err(|e| PipelineError::Cluster(e.to_string()))?;
    let steps = cluster_session(moving, &cfg.cluster);
    let n_clusters = steps.iter().map(Vec::len).sum();
    if n_clusters == 0 {
        return Err(PipelineError::Cluster("no moving-target clusters".into()));
    }
    Ok((n_clusters, associate_tracks(&steps, cfg.cluster.gate, leveling)))
}

pub fn calibrate(session: &RecordingSession, cfg: &PipelineConfig) -> Result<CalibrationRun, PipelineError> {
    let frames = &session.radar;
    let moving = moving_frames(frames, cfg.cluster.v_min);
    let n_moving: usize = moving.iter().map(|f| f.targets.len()).sum();
    let (n_clusters, tracks3d) = tracks_from(&moving, cfg, None)?;
    info!("{n_clusters} clusters, {} tracks in 3D", tracks3d.len());

    cfg.ground.validate()?;
    let pts: Vec<Vec3> = moving.iter().flat_map(|f| f.targets.iter().map(|t| t.position)).collect();
    let ground: GroundPlane = estimate_ground(&pts, cfg.ground.radius, cfg.ground.keep_fraction)?;
    let leveling = ground.leveling;
    info!("ground normal {:?} from {} points", ground.normal.as_slice(), pts.len());

    let steps = cluster_session(&moving, &cfg.cluster);
    let tracks: Vec<ObjectTrack> = associate_tracks(&steps, cfg.cluster.gate, Some(&leveling))
        .into_iter()
        .filter(|t| t.len() >= cfg.track.min_len)
        .collect();

    cfg.track.validate()?;
    let mut smoothed = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in smooth_tracks(&tracks, &leveling, &cfg.track) {
        match r {
            Ok(s) => smoothed.push(s),
            Err(e) => {
                warn!("track {id}: smoothing failed: {e}");
                failures.push(e);
            }
        }
    }
    if smoothed.is_empty() {
        return Err(match failures.into_iter().next() {
            Some(e) => e.into(),
            None => HypothesisError::InsufficientPasses { n: 0, min_pts: cfg.hypothesis.min_pts }.into(),
        });
    }
    let n_failures = tracks.len() - smoothed.len();

    cfg.hypothesis.validate()?;
    let hyps = generate_hypotheses(&smoothed, &session.pose, &cfg.hypothesis);
    let clusters = cluster_hypotheses(&hyps, cfg.hypothesis.eps_t, cfg.hypothesis.min_pts)?;
    let selected = crate::hypothesis::select_hypothesis_cluster(&clusters).expect("nonempty cluster list");
    let (unrefined, fit) = finalize_calibration(selected, &leveling, &session.meta.origin)?;
    let table = clusters
        .iter()
        .map(|c| HypothesisClusterRow {
            mean_t: c.mean_t.into(),
            members: c.members.len(),
            track_ids: c.members.iter().map(|h| h.track_id).collect(),
            mean_angle_deg: c.mean_pairwise_angle.to_degrees(),
            mean_rms_m: c.mean_rms(),
            selected: std::ptr::eq(c, selected),
        })
        .collect();

    let (calibration, refine, refined) = if cfg.refine.enabled {
        cfg.refine.validate()?;
        let out = refine_calibration(&unrefined, &moving, &tracks, &session.pose, &cfg.vehicle, &cfg.refine, &cfg.track)?;
        let summary = RefineSummary {
            accepted_tracks: out.accepted_tracks.clone(),
            n_correspondences: out.n_correspondences,
            rounds: out.rounds,
            offset_m: out.offset.into(),
            initial_loss_m: out.initial_loss,
            final_loss_m: out.final_loss,
            reverted: out.reverted,
            optimizer_hit_cap: out.optimizer_hit_cap,
        };
        (out.calibration, Some(summary), !out.reverted)
    } else {
        (unrefined.clone(), None, false)
    };

    let lev = leveling.to_euler().unwrap_or(EulerAngles::ZERO).to_degrees();
    let report = CalibrationReport {
        n_frames: frames.len(),
        n_targets: frames.iter().map(|f| f.targets.len()).sum(),
        n_moving_targets: n_moving,
        n_clusters,
        n_tracks_3d: tracks3d.len(),
        ground: GroundSummary {
            normal: ground.normal.into(),
            offset_m: ground.offset,
            n_points: pts.len(),
            leveling_rpy_deg: lev,
        },
        n_tracks_leveled: tracks.len(),
        n_tracks_smoothed: smoothed.len(),
        n_track_failures: n_failures,
        n_hypotheses: hyps.len(),
        hypothesis_clusters: table,
        unrefined: PoseSummary::of(&unrefined),
        residual_rms_m: fit.rms_residual,
        refine,
        result: PoseSummary::of(&calibration),
    };
    Ok(CalibrationRun {
        calibration,
        unrefined,
        residual_rms: fit.rms_residual,
        n_hypotheses: hyps.len(),
        refined,
        report,
    })
}

/// Cluster + track + metrics on a held-out session. `calib` may use any origin.
pub fn evaluate(session: &RecordingSession, calib: &Calibration, cfg: &PipelineConfig) -> Result<Metrics, PipelineError> {
    cfg.eval.validate()?;
    let calib = calib.rebased(&session.meta.origin);
    let moving = moving_frames(&session.radar, cfg.cluster.v_min);
    let (_, tracks) = tracks_from(&moving, cfg, Some(&calib.leveling))?;
    let tracks: Vec<ObjectTrack> = tracks.into_iter().filter(|t| t.len() >= cfg.track.min_len).collect();
    let accepted = associate_eval_tracks(&tracks, &session.pose, &calib, cfg.eval.reject_threshold, cfg.eval.max_dt_us)?;
    Ok(compute_metrics(&accepted, &moving, &session.pose, &cfg.vehicle, &calib, &cfg.eval)?)
}

fn fmt3(v: &[f64; 3], prec: usize) -> String {
    format!("{:.p$}, {:.p$}, {:.p$}", v[0], v[1], v[2], p = prec)
}

pub fn format_report(r: &CalibrationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frames            {}", r.n_frames);
    let _ = writeln!(s, "targets           {} ({} moving)", r.n_targets, r.n_moving_targets);
    let _ = writeln!(s, "clusters          {}", r.n_clusters);
    let _ = writeln!(s, "tracks (3d)       {}", r.n_tracks_3d);
    let _ = writeln!(s, "ground normal     [{}] from {} points", fmt3(&r.ground.normal, 5), r.ground.n_points);
    let _ = writeln!(s, "leveling rpy      [{}] deg", fmt3(&r.ground.leveling_rpy_deg, 3));
    let _ = writeln!(s, "tracks (leveled)  {} ({} smoothed, {} failed)", r.n_tracks_leveled, r.n_tracks_smoothed, r.n_track_failures);
    let _ = writeln!(s, "hypotheses        {}", r.n_hypotheses);
    let _ = writeln!(s);
    let _ = writeln!(s, "  #  sel  members  mean angle [deg]  mean rms [m]  mean t [m]");
    for (i, c) in r.hypothesis_clusters.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i:>3}  {:>3}  {:>7}  {:>16.4}  {:>12.4}  [{}]",
            if c.selected { "*" } else { "" },
            c.members,
            c.mean_angle_deg,
            c.mean_rms_m,
            fmt3(&c.mean_t, 3)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "unrefined t       [{}] m", fmt3(&r.unrefined.t, 4));
    let _ = writeln!(s, "unrefined rpy     [{}] deg", fmt3(&r.unrefined.rpy_deg, 4));
    let _ = writeln!(s, "registration rms  {:.4} m", r.residual_rms_m);
    match &r.refine {
        Some(f) => {
            let _ = writeln!(
                s,
                "refinement        {} tracks, {} correspondences, {} rounds, offset [{:.4}, {:.4}] m",
                f.accepted_tracks.len(),
                f.n_correspondences,
                f.rounds,
                f.offset_m[0],
                f.offset_m[1]
            );
            let _ = writeln!(
                s,
                "containment loss  {:.4} -> {:.4} m{}",
                f.initial_loss_m,
                f.final_loss_m,
                if f.reverted { " (reverted)" } else { "" }
            );
        }
        None => {
            let _ = writeln!(s, "refinement        disabled");
        }
    }
    let _ = writeln!(s, "t                 [{}] m", fmt3(&r.result.t, 4));
    let _ = writeln!(s, "rpy               [{}] deg", fmt3(&r.result.rpy_deg, 4));
    s
}
