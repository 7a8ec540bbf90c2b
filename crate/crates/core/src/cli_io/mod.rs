//! Configuration, run orchestration and file exports.

pub mod config;
pub mod export;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use export::{export_mesh, MeshFormat};
pub use run::{check, run, ExitStatus, RunOutcome, RunReport};
