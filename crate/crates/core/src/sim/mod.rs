//! Synthetic radar/localization recordings with a known sensor pose.

pub mod path;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibfile::{write_calibration_file, CalibFileError, CalibrationFile};
use crate::geometry::{Calibration, EulerAngles, RotationMatrix, UtmOrigin, Vec3};
use crate::ingest::{
    cartesian_to_spherical, spherical_to_cartesian, write_pose_log, write_radar_log, PoseTrack, RadarRowFormat,
    RecordingSession,
};
use crate::refine::{box_center, vehicle_footprint};
use crate::types::{RadarFrame, RadarTarget, Timestamp, VehicleDims, VehiclePose};

pub use path::{PathConfig, PathPoint, Segment};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("the vehicle never enters the sensor field of view")]
    OutOfFov,
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Calib(#[from] CalibFileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionModel {
    /// Uniform points on the sensor-facing faces of the box.
    #[default]
    Surface,
    /// The visible vertical box edges, sampled at box-center height.
    Corners,
}

/// Symmetric angular limits plus a range interval, sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fov {
    pub az_deg: f64,
    pub el_deg: f64,
    pub range_min: f64,
    pub range_max: f64,
}

impl Default for Fov {
    fn default() -> Self {
        Self {
            az_deg: 60.0,
            el_deg: 30.0,
            range_min: 0.5,
            range_max: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthPose {
    /// Sensor position, site coordinates, m.
    pub position: [f64; 3],
    pub rpy_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub utm_zone: String,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub passes: usize,
    pub speed_mps: f64,
    /// Idle time between passes; no pose samples are logged during it.
    pub pass_gap_s: f64,
    pub start_us: i64,
    pub radar_rate_hz: f64,
    pub pose_rate_hz: f64,
    pub sigma_range: f64,
    pub sigma_angle_deg: f64,
    pub sigma_v: f64,
    /// Expected clutter targets per frame, half stationary, half moving.
    pub clutter_rate: f64,
    pub reflection_model: ReflectionModel,
    /// Poisson mean of reflections per frame (surface model), truncated to 1..=8.
    pub mean_reflections: f64,
    pub road_z: f64,
    pub dims: VehicleDims,
    pub fov: Fov,
    pub truth: TruthPose,
    pub site: Site,
    pub path: PathConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            passes: 6,
            speed_mps: 10.0,
            pass_gap_s: 4.0,
            start_us: 1_700_000_000_000_000,
            radar_rate_hz: 15.0,
            pose_rate_hz: 50.0,
            sigma_range: 0.0,
            sigma_angle_deg: 0.0,
            sigma_v: 0.0,
            clutter_rate: 0.0,
            reflection_model: ReflectionModel::Corners,
            mean_reflections: 4.0,
            road_z: 0.0,
            dims: VehicleDims::default(),
            fov: Fov::default(),
            truth: TruthPose {
                position: [20.0, -29.6, 5.0],
                rpy_deg: [1.5, -12.0, 120.0],
            },
            site: Site {
                utm_zone: "32U".into(),
                easting: 691_000.0,
                northing: 5_334_000.0,
            },
            path: PathConfig {
                start: [-40.0, 0.0],
                heading_deg: 0.0,
                segments: vec![
                    Segment::Straight { length: 30.0 },
                    Segment::Arc {
                        radius: 15.0,
                        sweep_deg: 90.0,
                    },
                    Segment::Straight { length: 30.0 },
                ],
            },
        }
    }
}

impl ScenarioConfig {
    /// Noiseless, clutter-free, corner reflections.
    pub fn canonical() -> Self {
        Self::default()
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.radar_rate_hz > 0.0 && self.radar_rate_hz.is_finite()) {
            return bad("radar_rate_hz must be > 0");
        }
        if !(self.pose_rate_hz > 0.0 && self.pose_rate_hz.is_finite()) {
            return bad("pose_rate_hz must be > 0");
        }
        if self.passes == 0 {
            return bad("passes must be >= 1");
        }
        if !(self.speed_mps > 0.0) {
            return bad("speed_mps must be > 0");
        }
        if !(self.pass_gap_s >= 0.0) {
            return bad("pass_gap_s must be >= 0");
        }
        if ![self.sigma_range, self.sigma_angle_deg, self.sigma_v, self.clutter_rate]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
        {
            return bad("noise sigmas and clutter_rate must be >= 0");
        }
        if !(self.mean_reflections > 0.0) {
            return bad("mean_reflections must be > 0");
        }
        let f = &self.fov;
        if !(f.az_deg > 0.0 && f.el_deg > 0.0 && f.range_min >= 0.0 && f.range_max > f.range_min) {
            return bad("fov limits must be well-ordered");
        }
        self.dims.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.path.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn truth_calibration(&self) -> Calibration {
        let [r, p, y] = self.truth.rpy_deg.map(f64::to_radians);
        Calibration::new(
            RotationMatrix::rot_z(y),
            Vec3::from(self.truth.position),
            RotationMatrix::rot_y(p) * RotationMatrix::rot_x(r),
            self.site_origin(),
        )
    }

    pub fn site_origin(&self) -> UtmOrigin {
        UtmOrigin::new(self.site.utm_zone.clone(), self.site.easting, self.site.northing)
    }
}

/// Inclusive spherical limits check of a sensor-frame point.
pub fn fov_filter(p: &Vec3, fov: &Fov) -> bool {
    const SLACK: f64 = 1e-12;
    let (r, az, el) = cartesian_to_spherical(p);
    r >= fov.range_min - SLACK
        && r <= fov.range_max + SLACK
        && az.abs() <= fov.az_deg.to_radians() + SLACK
        && el.abs() <= fov.el_deg.to_radians() + SLACK
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Vehicle,
    StaticClutter,
    MovingClutter,
}

impl LabelKind {
    fn as_str(self) -> &'static str {
        match self {
            LabelKind::Vehicle => "vehicle",
            LabelKind::StaticClutter => "static_clutter",
            LabelKind::MovingClutter => "moving_clutter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLabel {
    pub t: Timestamp,
    pub index: usize,
    pub kind: LabelKind,
    pub pass: Option<usize>,
}

/// A generated recording. Poses and `truth` are in site coordinates.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub frames: Vec<RadarFrame>,
    pub poses: Vec<VehiclePose>,
    pub labels: Vec<TargetLabel>,
    pub truth: Calibration,
    pub site: UtmOrigin,
    pub pass_windows: Vec<(Timestamp, Timestamp)>,
    pub pose_rate_hz: f64,
}

impl Scenario {
    pub fn session(&self) -> RecordingSession {
        let pose = PoseTrack::new(self.poses.clone(), Some(self.pose_rate_hz)).expect("generated poses are increasing");
        RecordingSession::new(self.frames.clone(), pose, self.site.clone())
    }
}

// per-frame RNG streams
const STREAM_REFLECT: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_CLUTTER: u64 = 2;

fn frame_rng(seed: u64, frame: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 * 4 + kind);
    rng
}

struct Kinematics {
    pose: VehiclePose,
    velocity: Vec3,
    omega: f64,
}

fn vehicle_at(cfg: &ScenarioConfig, tau: f64, t: Timestamp) -> Kinematics {
    let pp = cfg.path.at(cfg.speed_mps * tau);
    let z = cfg.road_z + cfg.dims.height / 2.0 - cfg.dims.ref_offset.z;
    Kinematics {
        pose: VehiclePose {
            t,
            position: Vec3::new(pp.x, pp.y, z),
            rpy: EulerAngles::new(0.0, 0.0, pp.heading),
        },
        velocity: Vec3::new(pp.heading.cos(), pp.heading.sin(), 0.0) * cfg.speed_mps,
        omega: cfg.speed_mps * pp.curvature,
    }
}

/// World points on the vehicle seen from `sensor` (world coordinates).
fn reflections(cfg: &ScenarioConfig, pose: &VehiclePose, sensor: &Vec3, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let dims = &cfg.dims;
    let c = box_center(pose, dims);
    let rz = RotationMatrix::rot_z(pose.rpy.yaw);
    let rel = rz.transpose().apply(&(sensor - c));
    let (hl, hw, hh) = (dims.length / 2.0, dims.width / 2.0, dims.height / 2.0);
    // front, left, rear, right
    let faces = [rel.x > hl, rel.y > hw, rel.x < -hl, rel.y < -hw];
    match cfg.reflection_model {
        ReflectionModel::Corners => {
            let fp = vehicle_footprint(pose, dims);
            // corners FR, FL, RL, RR and their adjacent faces
            let adjacent = [(0, 3), (0, 1), (1, 2), (2, 3)];
            fp.corners
                .iter()
                .zip(adjacent)
                .filter(|(_, (a, b))| faces[*a] || faces[*b])
                .map(|(p, _)| Vec3::new(p.x, p.y, c.z))
                .collect()
        }
        ReflectionModel::Surface => {
            let top = rel.z > hh;
            let areas = [
                faces[0] as u8 as f64 * dims.width * dims.height,
                faces[1] as u8 as f64 * dims.length * dims.height,
                faces[2] as u8 as f64 * dims.width * dims.height,
                faces[3] as u8 as f64 * dims.length * dims.height,
                top as u8 as f64 * dims.length * dims.width,
            ];
            let total: f64 = areas.iter().sum();
            if total == 0.0 {
                return Vec::new();
            }
            let poisson = Poisson::new(cfg.mean_reflections).expect("validated mean");
            let n = loop {
                let k = poisson.sample(rng) as usize;
                if (1..=8).contains(&k) {
                    break k;
                }
            };
            (0..n)
                .map(|_| {
                    let mut u = rng.random_range(0.0..total);
                    let face = areas
                        .iter()
                        .position(|a| {
                            if u < *a {
                                true
                            } else {
                                u -= a;
                                false
                            }
                        })
                        .unwrap_or(4);
                    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let v = match face {
                        0 => Vec3::new(hl, a * hw, b * hh),
                        1 => Vec3::new(a * hl, hw, b * hh),
                        2 => Vec3::new(-hl, a * hw, b * hh),
                        3 => Vec3::new(a * hl, -hw, b * hh),
                        _ => Vec3::new(a * hl, b * hw, hh),
                    };
                    c + rz.apply(&v)
                })
                .collect()
        }
    }
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let truth = cfg.truth_calibration();
    let sensor = truth.translation;
    let to_sensor = truth.rotation.transpose();

    let pose_period = (1e6 / cfg.pose_rate_hz).round() as i64;
    let pass_len = ((cfg.path.length() / cfg.speed_mps * 1e6) as i64 / pose_period) * pose_period;
    let gap = (cfg.pass_gap_s * 1e6 / pose_period as f64).ceil() as i64 * pose_period;
    let stride = pass_len + gap.max(pose_period);
    let windows: Vec<(Timestamp, Timestamp)> = (0..cfg.passes)
        .map(|k| {
            let a = cfg.start_us + k as i64 * stride;
            (Timestamp(a), Timestamp(a + pass_len))
        })
        .collect();

    let mut poses = Vec::new();
    for (a, b) in &windows {
        let mut t = a.0;
        while t <= b.0 {
            poses.push(vehicle_at(cfg, (t - a.0) as f64 * 1e-6, Timestamp(t)).pose);
            t += pose_period;
        }
    }

    let sigma_angle = cfg.sigma_angle_deg.to_radians();
    let noise = |sigma: f64| Normal::new(0.0, sigma).expect("validated sigma");
    let (n_range, n_angle, n_v) = (noise(cfg.sigma_range), noise(sigma_angle), noise(cfg.sigma_v));
    let clutter = (cfg.clutter_rate > 0.0).then(|| Poisson::new(cfg.clutter_rate).expect("validated rate"));
    let end = windows.last().map_or(cfg.start_us, |w| w.1 .0);

    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut any_vehicle = false;
    for i in 0.. {
        let t = Timestamp(cfg.start_us + (i as f64 * 1e6 / cfg.radar_rate_hz).round() as i64);
        if t.0 > end {
            break;
        }
        let mut targets = Vec::new();
        let mut push = |p: Vec3, v: f64, kind: LabelKind, pass: Option<usize>, targets: &mut Vec<RadarTarget>| {
            if let Ok(tg) = RadarTarget::new(t, p, v, None) {
                labels.push(TargetLabel { t, index: targets.len(), kind, pass });
                targets.push(tg);
            }
        };

        if let Some(k) = windows.iter().position(|(a, b)| *a <= t && t <= *b) {
            let kin = vehicle_at(cfg, (t.0 - windows[k].0 .0) as f64 * 1e-6, t);
            let mut r_rng = frame_rng(cfg.seed, i, STREAM_REFLECT);
            let mut n_rng = frame_rng(cfg.seed, i, STREAM_NOISE);
            for w in reflections(cfg, &kin.pose, &sensor, &mut r_rng) {
                let p_s = to_sensor.apply(&(w - sensor));
                if !fov_filter(&p_s, &cfg.fov) {
                    continue;
                }
                let d = w - kin.pose.position;
                let vel = kin.velocity + Vec3::new(-d.y, d.x, 0.0) * kin.omega;
                let los = (w - sensor).normalize();
                let v_rad = vel.dot(&los) + n_v.sample(&mut n_rng);
                let (r, az, el) = cartesian_to_spherical(&p_s);
                let p = spherical_to_cartesian(
                    r + n_range.sample(&mut n_rng),
                    az + n_angle.sample(&mut n_rng),
                    el + n_angle.sample(&mut n_rng),
                );
                any_vehicle = true;
                push(p, v_rad, LabelKind::Vehicle, Some(k), &mut targets);
            }
        }

        if let Some(pois) = &clutter {
            let mut c_rng = frame_rng(cfg.seed, i, STREAM_CLUTTER);
            let n = pois.sample(&mut c_rng) as usize;
            let f = &cfg.fov;
            for _ in 0..n {
                let r = c_rng.random_range(f.range_min.max(2.0)..f.range_max.min(100.0).max(f.range_min + 2.5));
                let az = c_rng.random_range(-f.az_deg..=f.az_deg).to_radians();
                let el = c_rng.random_range(-f.el_deg..=f.el_deg).to_radians();
                let (v, kind) = if c_rng.random_bool(0.5) {
                    (n_v.sample(&mut c_rng), LabelKind::StaticClutter)
                } else {
                    let s = if c_rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (s * c_rng.random_range(1.0..10.0), LabelKind::MovingClutter)
                };
                push(spherical_to_cartesian(r, az, el), v, kind, None, &mut targets);
            }
        }
        frames.push(RadarFrame::new(t, targets));
    }
    if !any_vehicle {
        return Err(SimError::OutOfFov);
    }
    Ok(Scenario {
        frames,
        poses,
        labels,
        truth,
        site: cfg.site_origin(),
        pass_windows: windows,
        pose_rate_hz: cfg.pose_rate_hz,
    })
}

pub fn write_labels(labels: &[TargetLabel], w: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "t_us,target_index,label,pass")?;
    for l in labels {
        let pass = l.pass.map(|p| p.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", l.t.0, l.index, l.kind.as_str(), pass)?;
    }
    w.flush()
}

/// Output file locations of [`write_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioFiles {
    pub radar: PathBuf,
    pub pose: PathBuf,
    pub truth: PathBuf,
    pub labels: PathBuf,
}

pub fn write_scenario(dir: impl AsRef<Path>, s: &Scenario) -> Result<ScenarioFiles, SimError> {
    let dir = dir.as_ref();
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| SimError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = ScenarioFiles {
        radar: dir.join("radar.jsonl"),
        pose: dir.join("pose.csv"),
        truth: dir.join("truth.json"),
        labels: dir.join("labels.csv"),
    };
    let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(io(p));

    let mut w = create(&files.radar)?;
    write_radar_log(&s.frames, RadarRowFormat::Spherical, &mut w)
        .and_then(|_| w.flush())
        .map_err(io(&files.radar))?;
    let mut w = create(&files.pose)?;
    write_pose_log(&s.poses, &s.site, &mut w)
        .and_then(|_| w.flush())
        .map_err(io(&files.pose))?;
    write_labels(&s.labels, create(&files.labels)?).map_err(io(&files.labels))?;
    write_calibration_file(&files.truth, &CalibrationFile::from_calibration(&s.truth, 0.0, 0, false))?;
    Ok(files)
}
