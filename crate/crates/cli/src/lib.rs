//! Configuration and experiment driver behind the `minres` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, Mode, RawConfig, RunConfig};
pub use run::{execute, RunFailure};
