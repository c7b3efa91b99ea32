//! Reproducible experiment runs on top of `concord`.
//!
//! A run is described by a TOML config (see [`config`]), executed by
//! [`run::run`], and leaves its CSV artifacts, the resolved config and a
//! checksum manifest in the output directory.

pub mod config;
pub mod manifest;
pub mod run;

pub use config::{validate_config, validate_with, ConfigErrors, ConfigIssue, ExperimentConfig, ExperimentKind, Overrides};
pub use manifest::Manifest;
pub use run::{run, RunError, RunSummary};
