//! Scenario configuration, run orchestration and output for the `fieldflow` binary.

pub mod config;
pub mod error;
pub mod expr;
pub mod scenario;
pub mod output;
pub mod study;
pub mod checks;
