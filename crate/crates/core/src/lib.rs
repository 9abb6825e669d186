//! Extrinsic calibration of roadside radars against connected-vehicle localization.

pub mod calibfile;
pub mod cluster;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod groundplane;
pub mod hypothesis;
pub mod ingest;
pub mod pipeline;
pub mod refine;
pub mod sim;
pub mod track;
pub mod types;

pub use geometry::{Calibration, EulerAngles, RotationMatrix, UtmOrigin, Vec3};
pub use types::{RadarFrame, RadarTarget, Timestamp, VehicleDims, VehiclePose};
