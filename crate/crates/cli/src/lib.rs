//! Config-driven experiment runner for `randmaps`: reads a TOML experiment,
//! runs it, writes a JSON report with CSV tables, and replays reports
//! bit-exactly.

pub mod config;
pub mod error;
pub mod output;
pub mod replay;
pub mod run;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use run::{run, RunReport, Verdict};
