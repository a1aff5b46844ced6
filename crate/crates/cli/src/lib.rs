//! Scenario files, ensemble driver, output formats and the validation suite
//! behind the `tcsl` binary.

pub mod checks;
pub mod commands;
pub mod config;
pub mod ensemble;
pub mod output;
