//! Command-line front end and HTTP service for `kpsel`.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod service;

/// Exit status for bad command-line usage.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for unreadable or invalid data, configs and checkpoints.
pub const EXIT_DATA: i32 = 2;
