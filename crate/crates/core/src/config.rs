//! Pipeline configuration: a TOML file with one table per stage plus
//! `key=value` overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterParams;
use crate::eval::EvalParams;
use crate::groundplane::GroundParams;
use crate::hypothesis::HypothesisParams;
use crate::refine::RefineParams;
use crate::track::TrackParams;
use crate::types::VehicleDims;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("override `{key}`: `{segment}` is not a table")]
    NotATable { key: String, segment: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub cluster: ClusterParams,
    pub ground: GroundParams,
    pub track: TrackParams,
    pub hypothesis: HypothesisParams,
    pub refine: RefineParams,
    pub eval: EvalParams,
    pub vehicle: VehicleDims,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and applies `overrides` (`section.key=value`, value in TOML
    /// syntax; bare words are taken as strings) before validation.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.cluster.validate().map_err(|e| inv(&e))?;
        self.ground.validate().map_err(|e| inv(&e))?;
        self.track.validate().map_err(|e| inv(&e))?;
        self.hypothesis.validate().map_err(|e| inv(&e))?;
        self.refine.validate().map_err(|e| inv(&e))?;
        self.eval.validate().map_err(|e| inv(&e))?;
        self.vehicle.validate().map_err(|e| inv(&e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, o: &str) -> Result<(), ConfigError> {
    let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(o.to_string()));
    }
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for seg in path {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::NotATable {
            key: key.to_string(),
            segment: seg.to_string(),
        })?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}
