//! Radar and localization log I/O, validation and pose lookup.
//!
//! Radar logs are JSON lines (one frame per line), pose logs are CSV. Both start
//! with a `# schema=1` line.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, EulerAngles, UtmOrigin, Vec3};
use crate::types::{RadarFrame, RadarTarget, Timestamp, VehiclePose};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_LINE: &str = "# schema=1";
pub const POSE_HEADER: &str = "t_us,utm_zone,easting,northing,altitude,roll,pitch,yaw";

/// Default pose lookup tolerance: 50 ms.
pub const DEFAULT_MAX_DT_US: i64 = 50_000;

/// A gap longer than this many nominal periods is a discontinuity.
pub const DISCONTINUITY_FACTOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty log")]
    Empty,
    #[error("missing or malformed schema line (expected `{SCHEMA_LINE}`), found `{0}`")]
    MissingSchema(String),
    #[error("unsupported schema version {found} (supported: {SCHEMA_VERSION})")]
    SchemaVersion { found: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {t} is not strictly increasing")]
    NonMonotonic { line: usize, t: i64 },
    #[error("line {line}: angle {name} = {value} outside (-pi, pi]")]
    AngleRange {
        line: usize,
        name: &'static str,
        value: f64,
    },
    #[error("no pose available at {0}")]
    NoPose(Timestamp),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_schema_line(line: &str) -> Result<(), IngestError> {
    let trimmed = line.trim();
    let Some(rest) = trimmed.strip_prefix('#') else {
        return Err(IngestError::MissingSchema(trimmed.to_string()));
    };
    let Some(version) = rest.trim().strip_prefix("schema=") else {
        return Err(IngestError::MissingSchema(trimmed.to_string()));
    };
    if version.trim() != SCHEMA_VERSION.to_string() {
        return Err(IngestError::SchemaVersion {
            found: version.trim().to_string(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Radar log

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRow {
    Spherical {
        r: f64,
        az: f64,
        el: f64,
        v_rad: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rcs: Option<f64>,
    },
    Cartesian {
        x: f64,
        y: f64,
        z: f64,
        v_rad: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rcs: Option<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRow {
    t_us: i64,
    targets: Vec<TargetRow>,
}

/// Row layout used when writing radar logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadarRowFormat {
    #[default]
    Spherical,
    Cartesian,
}

/// Spherical (range, azimuth, elevation) → sensor Cartesian.
pub fn spherical_to_cartesian(r: f64, az: f64, el: f64) -> Vec3 {
    Vec3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
}

/// Sensor Cartesian → (range, azimuth, elevation).
pub fn cartesian_to_spherical(p: &Vec3) -> (f64, f64, f64) {
    let r = p.norm();
    let az = p.y.atan2(p.x);
    let el = p.z.atan2(p.x.hypot(p.y));
    (r, az, el)
}

pub fn read_radar_log(path: impl AsRef<Path>) -> Result<Vec<RadarFrame>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_radar_log(BufReader::new(file))
}

pub fn parse_radar_log(reader: impl BufRead) -> Result<Vec<RadarFrame>, IngestError> {
    let mut frames: Vec<RadarFrame> = Vec::new();
    let mut saw_schema = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !saw_schema {
            check_schema_line(&line)?;
            saw_schema = true;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: FrameRow = serde_json::from_str(trimmed).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let t = Timestamp(row.t_us);
        if let Some(prev) = frames.last() {
            if t <= prev.t {
                return Err(IngestError::NonMonotonic {
                    line: line_no,
                    t: row.t_us,
                });
            }
        }
        let targets = row
            .targets
            .into_iter()
            .map(|tr| {
                let (p, v_rad, rcs) = match tr {
                    TargetRow::Spherical { r, az, el, v_rad, rcs } => {
                        (spherical_to_cartesian(r, az, el), v_rad, rcs)
                    }
                    TargetRow::Cartesian { x, y, z, v_rad, rcs } => (Vec3::new(x, y, z), v_rad, rcs),
                };
                RadarTarget::new(t, p, v_rad, rcs).map_err(|e| IngestError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(RadarFrame::new(t, targets));
    }
    if !saw_schema {
        return Err(IngestError::Empty);
    }
    if frames.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(frames)
}

pub fn write_radar_log(
    frames: &[RadarFrame],
    format: RadarRowFormat,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    for frame in frames {
        let targets = frame
            .targets
            .iter()
            .map(|tg| match format {
                RadarRowFormat::Spherical => {
                    let (r, az, el) = cartesian_to_spherical(&tg.position);
                    TargetRow::Spherical {
                        r,
                        az,
                        el,
                        v_rad: tg.v_rad,
                        rcs: tg.rcs,
                    }
                }
                RadarRowFormat::Cartesian => TargetRow::Cartesian {
                    x: tg.position.x,
                    y: tg.position.y,
                    z: tg.position.z,
                    v_rad: tg.v_rad,
                    rcs: tg.rcs,
                },
            })
            .collect();
        let row = FrameRow {
            t_us: frame.t.0,
            targets,
        };
        serde_json::to_writer(&mut w, &row).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pose track

/// How [`PoseTrack::pose_at`] maps a query time onto samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseInterpolation {
    #[default]
    Linear,
    Nearest,
}

/// Time-sorted localization samples with gap bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    samples: Vec<VehiclePose>,
    nominal_rate: f64,
    /// `i` in this list marks a discontinuity between sample `i` and `i + 1`.
    discontinuities: Vec<usize>,
}

impl PoseTrack {
    /// Builds a track; `nominal_rate` defaults to the inverse median sample spacing.
    pub fn new(samples: Vec<VehiclePose>, nominal_rate: Option<f64>) -> Result<Self, IngestError> {
        if samples.is_empty() {
            return Err(IngestError::Empty);
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(IngestError::NonMonotonic {
                    line: i + 2,
                    t: w[1].t.0,
                });
            }
        }
        let rate = match nominal_rate {
            Some(r) => r,
            None => {
                let mut gaps: Vec<i64> = samples.windows(2).map(|w| w[1].t.0 - w[0].t.0).collect();
                if gaps.is_empty() {
                    50.0
                } else {
                    gaps.sort_unstable();
                    1e6 / gaps[gaps.len() / 2] as f64
                }
            }
        };
        let limit = DISCONTINUITY_FACTOR * 1e6 / rate;
        let discontinuities = samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[1].t.0 - w[0].t.0) as f64 > limit)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            samples,
            nominal_rate: rate,
            discontinuities,
        })
    }

    pub fn samples(&self) -> &[VehiclePose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }

    pub fn discontinuities(&self) -> &[usize] {
        &self.discontinuities
    }

    pub fn span(&self) -> (Timestamp, Timestamp) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    fn is_gap_after(&self, i: usize) -> bool {
        self.discontinuities.binary_search(&i).is_ok()
    }

    /// Pose at `t`, see [`pose_at`].
    pub fn pose_at(&self, t: Timestamp, max_dt: i64, mode: PoseInterpolation) -> Result<VehiclePose, IngestError> {
        let s = &self.samples;
        // first sample with time >= t
        let hi = s.partition_point(|p| p.t < t);
        if hi < s.len() && s[hi].t == t {
            return Ok(s[hi]);
        }
        if hi == 0 {
            return if s[0].t.0 - t.0 <= max_dt {
                Ok(VehiclePose { t, ..s[0] })
            } else {
                Err(IngestError::NoPose(t))
            };
        }
        if hi == s.len() {
            let last = s[s.len() - 1];
            return if t.0 - last.t.0 <= max_dt {
                Ok(VehiclePose { t, ..last })
            } else {
                Err(IngestError::NoPose(t))
            };
        }
        let (a, b) = (s[hi - 1], s[hi]);
        let (da, db) = (t.0 - a.t.0, b.t.0 - t.0);
        if da.min(db) > max_dt {
            return Err(IngestError::NoPose(t));
        }
        if self.is_gap_after(hi - 1) || mode == PoseInterpolation::Nearest {
            let near = if da <= db { a } else { b };
            return Ok(VehiclePose { t, ..near });
        }
        let w = da as f64 / (b.t.0 - a.t.0) as f64;
        let lerp_angle = |x: f64, y: f64| wrap_angle(x + w * wrap_angle(y - x));
        Ok(VehiclePose {
            t,
            position: a.position + (b.position - a.position) * w,
            rpy: EulerAngles {
                roll: lerp_angle(a.rpy.roll, b.rpy.roll),
                pitch: lerp_angle(a.rpy.pitch, b.rpy.pitch),
                yaw: lerp_angle(a.rpy.yaw, b.rpy.yaw),
            },
        })
    }
}

/// Pose of the vehicle at `t`.
///
/// Exact hits return the stored sample. Otherwise the bracketing samples are
/// interpolated (position linearly, angles along the shortest arc), provided the
/// nearer sample lies within `max_dt` and the bracket is not a discontinuity.
/// Inside a discontinuity only the nearer sample is returned, again subject to
/// `max_dt`. Outside the track span the end sample is returned when within
/// `max_dt`; nothing is ever extrapolated.
pub fn pose_at(track: &PoseTrack, t: Timestamp, max_dt: i64) -> Result<VehiclePose, IngestError> {
    track.pose_at(t, max_dt, PoseInterpolation::Linear)
}

fn parse_pose_rows(reader: impl Read) -> Result<(Vec<VehiclePose>, UtmOrigin), IngestError> {
    let mut lines = BufReader::new(reader);
    let mut first = String::new();
    let n = lines.read_line(&mut first).map_err(|e| IngestError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if n == 0 {
        return Err(IngestError::Empty);
    }
    check_schema_line(&first)?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(lines);
    let header = rdr.headers().map_err(|e| IngestError::Malformed {
        line: 2,
        message: e.to_string(),
    })?;
    let header_str = header.iter().collect::<Vec<_>>().join(",");
    if header_str != POSE_HEADER {
        return Err(IngestError::Malformed {
            line: 2,
            message: format!("unexpected header `{header_str}`, expected `{POSE_HEADER}`"),
        });
    }

    let mut raw: Vec<(i64, String, [f64; 3], [f64; 3], usize)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| IngestError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 8 {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected 8 fields, found {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64, IngestError> {
            let v: f64 = rec[k].parse().map_err(|_| IngestError::Malformed {
                line,
                message: format!("field {} `{}` is not a number", k + 1, &rec[k]),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Malformed {
                    line,
                    message: format!("field {} is not finite", k + 1),
                });
            }
            Ok(v)
        };
        let t: i64 = rec[0].parse().map_err(|_| IngestError::Malformed {
            line,
            message: format!("timestamp `{}` is not an integer", &rec[0]),
        })?;
        if t <= 0 {
            return Err(IngestError::Malformed {
                line,
                message: "timestamp must be positive".into(),
            });
        }
        let pos = [num(2)?, num(3)?, num(4)?];
        let rpy = [num(5)?, num(6)?, num(7)?];
        for (name, v) in ["roll", "pitch", "yaw"].into_iter().zip(rpy) {
            if !(v > -std::f64::consts::PI && v <= std::f64::consts::PI) {
                return Err(IngestError::AngleRange { line, name, value: v });
            }
        }
        if let Some(prev) = raw.last() {
            if t <= prev.0 {
                return Err(IngestError::NonMonotonic { line, t });
            }
        }
        raw.push((t, rec[1].to_string(), pos, rpy, line));
    }
    let Some(first) = raw.first() else {
        return Err(IngestError::Empty);
    };
    let origin = UtmOrigin::floor_of(first.1.clone(), first.2[0], first.2[1]);
    let samples = raw
        .into_iter()
        .map(|(t, zone, pos, rpy, line)| {
            if zone != origin.zone {
                return Err(IngestError::Malformed {
                    line,
                    message: format!("UTM zone changes from {} to {zone}", origin.zone),
                });
            }
            Ok(VehiclePose {
                t: Timestamp(t),
                position: Vec3::new(pos[0] - origin.easting, pos[1] - origin.northing, pos[2]),
                rpy: EulerAngles::new(rpy[0], rpy[1], rpy[2]),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((samples, origin))
}

/// Reads a pose CSV; positions are shifted by the returned origin.
pub fn read_pose_log(path: impl AsRef<Path>) -> Result<(PoseTrack, UtmOrigin), IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_pose_log(file)
}

pub fn parse_pose_log(reader: impl Read) -> Result<(PoseTrack, UtmOrigin), IngestError> {
    let (samples, origin) = parse_pose_rows(reader)?;
    Ok((PoseTrack::new(samples, None)?, origin))
}

/// Writes poses (local coordinates) back to absolute UTM.
pub fn write_pose_log(poses: &[VehiclePose], origin: &UtmOrigin, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    writeln!(w, "{POSE_HEADER}")?;
    for p in poses {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.t.0,
            origin.zone,
            p.position.x + origin.easting,
            p.position.y + origin.northing,
            p.position.z,
            p.rpy.roll,
            p.rpy.pitch,
            p.rpy.yaw
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Session

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub sensor_id: Option<String>,
    pub origin: UtmOrigin,
    pub duration_s: f64,
}

/// One recording: radar frames plus the calibration vehicle's localization.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSession {
    pub radar: Vec<RadarFrame>,
    pub pose: PoseTrack,
    pub meta: SessionMeta,
}

impl RecordingSession {
    pub fn new(radar: Vec<RadarFrame>, pose: PoseTrack, origin: UtmOrigin) -> Self {
        let duration_s = match (radar.first(), radar.last()) {
            (Some(a), Some(b)) => b.t.seconds_since(a.t),
            _ => 0.0,
        };
        Self {
            radar,
            pose,
            meta: SessionMeta {
                sensor_id: None,
                origin,
                duration_s,
            },
        }
    }
}

pub fn load_session(radar_path: impl AsRef<Path>, pose_path: impl AsRef<Path>) -> Result<RecordingSession, IngestError> {
    let radar = read_radar_log(radar_path.as_ref())?;
    let (pose, origin) = read_pose_log(pose_path)?;
    let mut session = RecordingSession::new(radar, pose, origin);
    session.meta.sensor_id = radar_path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pose(t: i64, x: f64, yaw: f64) -> VehiclePose {
        VehiclePose {
            t: Timestamp(t),
            position: Vec3::new(x, 0.0, 0.0),
            rpy: EulerAngles::new(0.0, 0.0, yaw),
        }
    }

    #[test]
    fn two_frame_radar_log() {
        let text = "# schema=1\n\
            {\"t_us\": 100, \"targets\": [{\"r\": 10.0, \"az\": 0.0, \"el\": 0.0, \"v_rad\": 1.0}]}\n\
            {\"t_us\": 200, \"targets\": [{\"x\": 1.0, \"y\": 2.0, \"z\": 3.0, \"v_rad\": -1.0, \"rcs\": 5.0}, {\"r\": 3.0, \"az\": 0.1, \"el\": 0.0, \"v_rad\": 0.0}]}\n";
        let frames = parse_radar_log(text.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].targets.len(), 1);
        assert_eq!(frames[1].targets.len(), 2);
        assert!((frames[0].targets[0].position - Vec3::new(10.0, 0.0, 0.0)).amax() < 1e-12);
        assert_eq!(frames[1].targets[0].rcs, Some(5.0));
    }

    #[test]
    fn spherical_conversion_by_hand() {
        let p = spherical_to_cartesian(10.0, 30f64.to_radians(), 10f64.to_radians());
        // 10·cos10°·cos30° = 8.5287, 10·cos10°·sin30° = 4.9240, 10·sin10° = 1.7365
        assert!((p - Vec3::new(8.529, 4.924, 1.736)).amax() < 1e-3);
    }

    #[test]
    fn radar_log_errors() {
        let bad_row = "# schema=1\n{\"t_us\": 100, \"targets\": []}\n{\"t_us\": 200, \"targets\": [{\"foo\": 1}]}\n";
        match parse_radar_log(bad_row.as_bytes()) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let non_mono = "# schema=1\n{\"t_us\": 200, \"targets\": []}\n{\"t_us\": 100, \"targets\": []}\n";
        assert!(matches!(parse_radar_log(non_mono.as_bytes()), Err(IngestError::NonMonotonic { line: 3, .. })));
        assert!(matches!(parse_radar_log("".as_bytes()), Err(IngestError::Empty)));
        assert!(matches!(parse_radar_log("# schema=1\n".as_bytes()), Err(IngestError::Empty)));
        assert!(matches!(
            parse_radar_log("# schema=2\n{\"t_us\": 1, \"targets\": []}\n".as_bytes()),
            Err(IngestError::SchemaVersion { .. })
        ));
        assert!(matches!(
            parse_radar_log("{\"t_us\": 1, \"targets\": []}\n".as_bytes()),
            Err(IngestError::MissingSchema(_))
        ));
    }

    #[test]
    fn three_sample_pose_log() {
        let text = format!(
            "# schema=1\n{POSE_HEADER}\n\
             1000,32U,573010.75,5362020.25,480.0,0.0,0.0,0.1\n\
             21000,32U,573011.0,5362020.5,480.0,0.0,0.0,0.1\n\
             41000,32U,573011.25,5362020.75,480.0,0.0,0.0,0.1\n"
        );
        let (track, origin) = parse_pose_log(text.as_bytes()).unwrap();
        assert_eq!(track.len(), 3);
        assert_eq!(origin, UtmOrigin::new("32U", 573010.0, 5362020.0));
        assert_eq!(track.samples()[0].position, Vec3::new(0.75, 0.25, 480.0));
        assert!((track.nominal_rate() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn pose_log_errors() {
        let dup = format!("# schema=1\n{POSE_HEADER}\n1000,32U,1,2,3,0,0,0\n1000,32U,1,2,3,0,0,0\n");
        assert!(matches!(parse_pose_log(dup.as_bytes()), Err(IngestError::NonMonotonic { .. })));
        let angle = format!("# schema=1\n{POSE_HEADER}\n1000,32U,1,2,3,0,0,3.5\n");
        assert!(matches!(parse_pose_log(angle.as_bytes()), Err(IngestError::AngleRange { name: "yaw", .. })));
        let neg_pi = format!("# schema=1\n{POSE_HEADER}\n1000,32U,1,2,3,{},0,0\n", -PI);
        assert!(matches!(parse_pose_log(neg_pi.as_bytes()), Err(IngestError::AngleRange { name: "roll", .. })));
        let bad = format!("# schema=1\n{POSE_HEADER}\n1000,32U,abc,2,3,0,0,0\n");
        assert!(matches!(parse_pose_log(bad.as_bytes()), Err(IngestError::Malformed { line: 3, .. })));
        let ver = format!("# schema=7\n{POSE_HEADER}\n1000,32U,1,2,3,0,0,0\n");
        assert!(matches!(parse_pose_log(ver.as_bytes()), Err(IngestError::SchemaVersion { .. })));
    }

    #[test]
    fn gap_is_recorded_as_discontinuity() {
        let mut samples: Vec<VehiclePose> = (0..50).map(|k| pose(1 + k * 20_000, k as f64, 0.0)).collect();
        let resume = samples.last().unwrap().t.0 + 2_000_000;
        samples.extend((0..50).map(|k| pose(resume + k * 20_000, k as f64, 0.0)));
        let track = PoseTrack::new(samples, None).unwrap();
        assert_eq!(track.discontinuities(), &[49]);
        // never interpolates across the gap
        let mid = Timestamp(resume - 1_000_000);
        assert!(matches!(pose_at(&track, mid, DEFAULT_MAX_DT_US), Err(IngestError::NoPose(_))));
        let near = Timestamp(resume - 10_000);
        assert_eq!(pose_at(&track, near, DEFAULT_MAX_DT_US).unwrap().position.x, 0.0);
    }

    #[test]
    fn pose_at_exact_and_midpoint() {
        let track = PoseTrack::new(vec![pose(1000, 0.0, 0.0), pose(21000, 1.0, 0.0)], None).unwrap();
        assert_eq!(pose_at(&track, Timestamp(1000), 0).unwrap(), track.samples()[0]);
        let mid = pose_at(&track, Timestamp(11000), DEFAULT_MAX_DT_US).unwrap();
        assert!((mid.position - Vec3::new(0.5, 0.0, 0.0)).amax() < 1e-15);
        // out of span
        assert!(pose_at(&track, Timestamp(200_000), DEFAULT_MAX_DT_US).is_err());
        assert!(pose_at(&track, Timestamp(21000 + 40_000), DEFAULT_MAX_DT_US).is_ok());
    }

    #[test]
    fn yaw_interpolation_takes_shortest_arc() {
        let a = 179f64.to_radians();
        let b = -179f64.to_radians();
        let track = PoseTrack::new(vec![pose(1000, 0.0, a), pose(21000, 0.0, b)], None).unwrap();
        let mid = pose_at(&track, Timestamp(11000), DEFAULT_MAX_DT_US).unwrap();
        // oracle: average the unit vectors
        let oracle = (a.sin() + b.sin()).atan2(a.cos() + b.cos());
        let diff = wrap_angle(mid.rpy.yaw - oracle);
        assert!(diff.abs() < 1e-12);
        assert!((mid.rpy.yaw.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn nearest_mode_and_max_dt() {
        let track = PoseTrack::new(vec![pose(1000, 0.0, 0.0), pose(161_000, 8.0, 0.0)], Some(50.0)).unwrap();
        // 80 ms to the closest sample
        assert!(track.pose_at(Timestamp(81_000), 50_000, PoseInterpolation::Linear).is_err());
        let n = track.pose_at(Timestamp(41_000), 50_000, PoseInterpolation::Nearest).unwrap();
        assert_eq!(n.position.x, 0.0);
    }

    #[test]
    fn pose_log_round_trip() {
        let origin = UtmOrigin::new("33T", 400_000.0, 5_000_000.0);
        let poses = vec![
            VehiclePose { t: Timestamp(5), position: Vec3::new(0.123456, 0.5, 300.25), rpy: EulerAngles::new(0.01, -0.02, 3.0) },
            VehiclePose { t: Timestamp(25), position: Vec3::new(1.987654, 8.5, 300.5), rpy: EulerAngles::new(0.0, 0.0, -3.1) },
        ];
        let mut buf = Vec::new();
        write_pose_log(&poses, &origin, &mut buf).unwrap();
        let (track, o2) = parse_pose_log(buf.as_slice()).unwrap();
        assert_eq!(o2, origin);
        for (a, b) in poses.iter().zip(track.samples()) {
            assert_eq!(a.t, b.t);
            assert!((a.position - b.position).amax() < 1e-4);
            assert!((a.rpy.yaw - b.rpy.yaw).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn radar_log_round_trip(
            pts in proptest::collection::vec((proptest::array::uniform3(-200.0..200.0f64), -30.0..30.0f64), 1..20),
            spherical in any::<bool>(),
        ) {
            let t = Timestamp(1_000_000);
            let targets: Vec<RadarTarget> = pts.iter()
                .filter(|(p, _)| Vec3::from(*p).norm() > 1e-3)
                .map(|(p, v)| RadarTarget::new(t, Vec3::from(*p), *v, Some(1.5)).unwrap())
                .collect();
            let frames = vec![RadarFrame::new(t, targets)];
            let fmt = if spherical { RadarRowFormat::Spherical } else { RadarRowFormat::Cartesian };
            let mut buf = Vec::new();
            write_radar_log(&frames, fmt, &mut buf).unwrap();
            let back = parse_radar_log(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 1);
            for (a, b) in frames[0].targets.iter().zip(&back[0].targets) {
                prop_assert!((a.position - b.position).amax() < 1e-4);
                prop_assert!((a.v_rad - b.v_rad).abs() < 1e-9);
                prop_assert_eq!(a.rcs, b.rcs);
            }
        }

        #[test]
        fn interpolation_is_a_convex_combination(x0 in -100.0..100.0f64, x1 in -100.0..100.0f64, frac in 0.0..1.0f64) {
            let track = PoseTrack::new(vec![pose(1000, x0, 0.0), pose(21000, x1, 0.0)], None).unwrap();
            let t = 1000 + (frac * 20000.0) as i64;
            let p = pose_at(&track, Timestamp(t), DEFAULT_MAX_DT_US).unwrap();
            prop_assert!(p.position.x >= x0.min(x1) - 1e-12 && p.position.x <= x0.max(x1) + 1e-12);
            let p2 = pose_at(&track, Timestamp((t + 1).min(21000)), DEFAULT_MAX_DT_US).unwrap();
            prop_assert!((p2.position.x - p.position.x).abs() <= (x1 - x0).abs() / 20000.0 + 1e-12);
        }
    }
}
