//! Experiment runner: config loading, dispatch to the core library, result
//! files and reproducibility manifests.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod output;
