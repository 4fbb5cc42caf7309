//! Experiment harness: configuration loading, Monte Carlo sweeps over one
//! system parameter, beampattern grids and the invariant self-test.
//!
//! Outputs are plain files: CSV tables with a fixed column schema, a JSON
//! manifest per sweep, JSON-lines iteration logs and gnuplot-ready grids.

pub mod beampattern;
pub mod config;
pub mod selftest;
pub mod spec;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] faultyris::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
