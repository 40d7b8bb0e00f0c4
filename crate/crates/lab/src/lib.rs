//! Experiment harness for deep linear network trainability studies.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod scan;
pub mod verify;

pub use error::{LabError, Result};
