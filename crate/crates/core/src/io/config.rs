//! Declarative TOML configuration mirroring `MapConfig` field names.
//!
//! ```toml
//! tau_s = 0.8
//! cell_size = 0.05
//!
//! [estimator]
//! voxel_size = 0.02
//! merge_mode = "flatness"
//! ```
//!
//! Estimator parameters that default relative to the voxel size (`epsilon`,
//! `base_threshold`) follow the configured `voxel_size` unless set explicitly.

use std::path::Path;

use toml::Table;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, MergeMode};
use crate::map::MapConfig;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigOverrides {
    pub voxel_size: Option<f64>,
    pub merge_mode: Option<MergeMode>,
    pub tau_s: Option<f64>,
    pub cell_size: Option<f64>,
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {msg}", path.display()))
}

/// Builds a config from TOML text (if any) plus overrides, then validates it.
pub fn parse_config(text: Option<&str>, overrides: &ConfigOverrides, origin: &Path) -> Result<MapConfig> {
    let mut user: Table = match text {
        Some(t) => t.parse().map_err(|source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        })?,
        None => Table::new(),
    };

    let estimator_table = match user.remove("estimator") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(config_err(origin, "[estimator] must be a table")),
        None => Table::new(),
    };
    let mut est_user = estimator_table;
    if let Some(v) = overrides.voxel_size {
        est_user.insert("voxel_size".into(), v.into());
    }
    if let Some(m) = overrides.merge_mode {
        let name = match m {
            MergeMode::Verbatim => "verbatim",
            MergeMode::Flatness => "flatness",
        };
        est_user.insert("merge_mode".into(), name.into());
    }
    let voxel = match est_user.get("voxel_size") {
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| config_err(origin, "voxel_size must be a number"))?,
        None => EstimatorConfig::default().voxel_size,
    };
    let mut est_table = toml::Value::try_from(EstimatorConfig::with_voxel_size(voxel))
        .map_err(|e| config_err(origin, e))?
        .as_table()
        .cloned()
        .expect("estimator config serializes to a table");
    est_table.extend(est_user);

    if let Some(v) = overrides.tau_s {
        user.insert("tau_s".into(), v.into());
    }
    if let Some(v) = overrides.cell_size {
        user.insert("cell_size".into(), v.into());
    }
    let mut table = toml::Value::try_from(MapConfig::default())
        .map_err(|e| config_err(origin, e))?
        .as_table()
        .cloned()
        .expect("map config serializes to a table");
    table.extend(user);
    table.insert("estimator".into(), toml::Value::Table(est_table));

    let config: MapConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(origin, e.message()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<MapConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(Some(&text), overrides, p)
        }
        None => parse_config(None, overrides, Path::new("<defaults>")),
    }
}

pub fn config_to_toml(config: &MapConfig) -> String {
    toml::to_string(config).expect("config is plain data")
}
