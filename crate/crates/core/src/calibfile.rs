//! `calibration.json` reading and writing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Calibration, EulerAngles, GeometryError, RotationMatrix, UtmOrigin, Vec3};

pub const CALIB_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum CalibFileError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed calibration file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported calibration schema {found} (expected {CALIB_SCHEMA})")]
    Schema { found: u32 },
    #[error("invalid rotation: {0}")]
    Rotation(#[from] GeometryError),
}

/// On-disk layout. Angles in degrees, quaternion scalar-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub schema: u32,
    pub utm_zone: String,
    pub origin: [f64; 2],
    pub t: [f64; 3],
    pub q_wxyz: [f64; 4],
    pub rpy_deg: [f64; 3],
    pub r_level_rpy_deg: [f64; 3],
    pub residual_rms_m: f64,
    pub n_hypotheses: usize,
    pub refined: bool,
}

impl CalibrationFile {
    pub fn from_calibration(c: &Calibration, residual_rms_m: f64, n_hypotheses: usize, refined: bool) -> Self {
        let rpy = c.rotation.to_euler().unwrap_or(EulerAngles::ZERO);
        let lev = c.leveling.to_euler().unwrap_or(EulerAngles::ZERO);
        Self {
            schema: CALIB_SCHEMA,
            utm_zone: c.origin.zone.clone(),
            origin: [c.origin.easting, c.origin.northing],
            t: [c.translation.x, c.translation.y, c.translation.z],
            q_wxyz: c.rotation.to_quaternion_wxyz(),
            rpy_deg: rpy.to_degrees(),
            r_level_rpy_deg: [lev.roll.to_degrees(), lev.pitch.to_degrees(), 0.0],
            residual_rms_m,
            n_hypotheses,
            refined,
        }
    }

    pub fn to_calibration(&self) -> Result<Calibration, CalibFileError> {
        if self.schema != CALIB_SCHEMA {
            return Err(CalibFileError::Schema { found: self.schema });
        }
        let rotation = RotationMatrix::from_quaternion_wxyz(self.q_wxyz)?;
        let [r, p, _] = self.r_level_rpy_deg;
        let leveling = RotationMatrix::rot_y(p.to_radians()) * RotationMatrix::rot_x(r.to_radians());
        Ok(Calibration {
            rotation,
            translation: Vec3::from(self.t),
            leveling,
            origin: UtmOrigin::new(self.utm_zone.clone(), self.origin[0], self.origin[1]),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CalibFileError> {
        let file: Self = serde_json::from_str(text)?;
        if file.schema != CALIB_SCHEMA {
            return Err(CalibFileError::Schema { found: file.schema });
        }
        Ok(file)
    }
}

pub fn write_calibration_file(path: impl AsRef<Path>, file: &CalibrationFile) -> Result<(), CalibFileError> {
    let path = path.as_ref();
    std::fs::write(path, file.to_json()).map_err(|source| CalibFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_calibration_file(path: impl AsRef<Path>) -> Result<CalibrationFile, CalibFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CalibFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CalibrationFile::parse(&text)
}
