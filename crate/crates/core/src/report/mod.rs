//! Configuration, command orchestration and artifact emission.

pub mod commands;
pub mod config;
pub mod svg;

pub use commands::{cmd_bound, cmd_calibrate, cmd_simulate, cmd_synthesize, ReportBundle};
pub use config::{ScenarioConfig, SCHEMA};
