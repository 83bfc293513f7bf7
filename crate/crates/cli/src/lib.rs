//! Command-line front end: scenario files, presets, CSV/JSON/SVG output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::run_command;
pub use config::{parse_config, preset, Scenario};
