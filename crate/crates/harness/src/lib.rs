//! Page capture, model client and the `coe` command-line harness built on
//! `coe-core`.

pub mod capture;
pub mod client;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod fixture;
pub mod manifest;
pub mod overlay;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
