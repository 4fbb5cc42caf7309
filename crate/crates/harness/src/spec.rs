//! Sweep specification: one axis, its values, schemes and trial count.

use std::path::{Path, PathBuf};

use faultyris::optimizer::Scheme;
use faultyris::scenario::{Profile, SystemConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Table;

use crate::config::config_with_overrides;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NFaulty,
    /// Total element count; `r_y` is derived with `r_z` held.
    RTotal,
    /// Power budget in dBm.
    PMax,
    NUsers,
    /// SINR target in dB.
    SinrThreshold,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::NFaulty => "n_faulty",
            Axis::RTotal => "r_total",
            Axis::PMax => "p_max",
            Axis::NUsers => "n_users",
            Axis::SinrThreshold => "sinr_threshold",
        }
    }

    /// `cfg` with this axis set to `v`.
    pub fn apply(self, cfg: &SystemConfig, v: f64) -> Result<SystemConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Invalid(format!("{} needs a non-negative integer, got {v}", self.name())))
            }
        };
        let mut out = cfg.clone();
        match self {
            Axis::NFaulty => out.n_faulty = count(v)?,
            Axis::RTotal => {
                let r = count(v)?;
                if r == 0 || r % cfg.r_z != 0 {
                    return Err(HarnessError::Invalid(format!("r_total {r} is not a multiple of r_z = {}", cfg.r_z)));
                }
                out.r_y = r / cfg.r_z;
            }
            Axis::PMax => out.p_max_w = 1e-3 * 10f64.powf(v / 10.0),
            Axis::NUsers => out.n_users = count(v)?,
            Axis::SinrThreshold => out.sinr_threshold = 10f64.powf(v / 10.0),
        }
        out.validate()?;
        Ok(out)
    }
}

impl std::str::FromStr for Axis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        [Axis::NFaulty, Axis::RTotal, Axis::PMax, Axis::NUsers, Axis::SinrThreshold]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown axis '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub n_trials: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

/// On-disk form: a profile, optional `[config]` overrides and the sweep.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    profile: Option<Profile>,
    axis: Axis,
    values: Vec<f64>,
    schemes: Option<Vec<Scheme>>,
    n_trials: usize,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    config: Table,
}

impl ExperimentSpec {
    pub fn new(base: SystemConfig, axis: Axis, values: Vec<f64>, schemes: Vec<Scheme>, n_trials: usize, seed: u64) -> Result<Self> {
        let s = ExperimentSpec { base, axis, values, schemes, n_trials, out_dir: None, seed };
        s.validate()?;
        Ok(s)
    }

    /// Fault-count sweep of the given profile over every scheme.
    pub fn default_for(profile: Profile, n_trials: usize, seed: u64) -> Result<Self> {
        let base = SystemConfig::from_profile(profile);
        let values = match profile {
            Profile::Desk => vec![0.0, 2.0, 4.0, 8.0],
            Profile::Paper => vec![0.0, 20.0, 40.0, 60.0],
        };
        Self::new(base, Axis::NFaulty, values, Scheme::ALL.to_vec(), n_trials, seed)
    }

    pub fn parse(text: &str, default_profile: Profile) -> Result<Self> {
        let f: SpecFile = toml::from_str(text)?;
        let base = config_with_overrides(f.profile.unwrap_or(default_profile), &f.config)?;
        let seed = f.seed.unwrap_or(base.rng_seed);
        let mut s = Self::new(base, f.axis, f.values, f.schemes.unwrap_or_else(|| Scheme::ALL.to_vec()), f.n_trials, seed)?;
        s.out_dir = f.out_dir;
        Ok(s)
    }

    pub fn load(path: &Path, default_profile: Profile) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, default_profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(HarnessError::Invalid("axis values are empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HarnessError::Invalid("axis values must be strictly increasing".into()));
        }
        if self.n_trials == 0 {
            return Err(HarnessError::Invalid("n_trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(HarnessError::Invalid("no schemes requested".into()));
        }
        for &v in &self.values {
            self.axis.apply(&self.base, v)?;
        }
        Ok(())
    }

    /// Configuration of axis point `i`, seeded by the spec.
    pub fn config_at(&self, i: usize) -> Result<SystemConfig> {
        let mut cfg = self.axis.apply(&self.base, self.values[i])?;
        cfg.rng_seed = self.seed;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
profile = "desk"
axis = "n_faulty"
values = [0, 2, 4]
schemes = ["proposed", "naive"]
n_trials = 3
seed = 9
[config]
n_users = 1
"#;

    #[test]
    fn parses_spec_file() {
        let s = ExperimentSpec::parse(SPEC, Profile::Paper).unwrap();
        assert_eq!(s.axis, Axis::NFaulty);
        assert_eq!(s.values, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.schemes, vec![Scheme::Proposed, Scheme::Naive]);
        assert_eq!(s.base.n_users, 1);
        assert_eq!(s.config_at(2).unwrap().n_faulty, 4);
        assert_eq!(s.config_at(0).unwrap().rng_seed, 9);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = SystemConfig::desk();
        let all = Scheme::ALL.to_vec();
        assert!(ExperimentSpec::new(base.clone(), Axis::NFaulty, vec![], all.clone(), 1, 0).is_err());
        assert!(ExperimentSpec::new(base.clone(), Axis::NFaulty, vec![4.0, 2.0], all.clone(), 1, 0).is_err());
        assert!(ExperimentSpec::new(base.clone(), Axis::NFaulty, vec![2.0], all.clone(), 0, 0).is_err());
        assert!(ExperimentSpec::new(base.clone(), Axis::RTotal, vec![18.0], all.clone(), 1, 0).is_err());
        assert!(ExperimentSpec::new(base, Axis::NFaulty, vec![1.5], all, 1, 0).is_err());
    }

    #[test]
    fn axes_set_the_right_fields() {
        let base = SystemConfig::desk();
        assert_eq!(Axis::RTotal.apply(&base, 24.0).unwrap().r_y, 6);
        assert!((Axis::PMax.apply(&base, 20.0).unwrap().p_max_w - 0.1).abs() < 1e-15);
        assert!((Axis::SinrThreshold.apply(&base, 10.0).unwrap().sinr_threshold - 10.0).abs() < 1e-12);
        assert_eq!(Axis::NUsers.apply(&base, 3.0).unwrap().n_users, 3);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentSpec::default_for(Profile::Desk, 2, 1).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 2;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
