//! System configuration from a profile plus optional TOML overrides.

use std::path::Path;

use faultyris::scenario::{Profile, SystemConfig};
use toml::{Table, Value};

use crate::{HarnessError, Result};

/// Overlays `overrides` on the profile preset. Unknown keys are rejected.
pub fn config_with_overrides(profile: Profile, overrides: &Table) -> Result<SystemConfig> {
    let mut base = match Value::try_from(SystemConfig::from_profile(profile))? {
        Value::Table(t) => t,
        _ => return Err(HarnessError::Invalid("configuration is not a table".into())),
    };
    for (k, v) in overrides {
        base.insert(k.clone(), v.clone());
    }
    let cfg: SystemConfig = Value::Table(base).try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file. A top-level `profile` key selects the preset; every
/// other key overrides a field of it.
pub fn parse_config(text: &str, default_profile: Profile) -> Result<SystemConfig> {
    let mut table: Table = text.parse()?;
    let profile = match table.remove("profile") {
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(HarnessError::Invalid("'profile' must be a string".into())),
        None => default_profile,
    };
    config_with_overrides(profile, &table)
}

pub fn load_config(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<SystemConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?, profile)?,
        None => SystemConfig::from_profile(profile),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}
