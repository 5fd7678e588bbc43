//! Command-line pipeline: data generation, training, attribution, ground
//! truth, evaluation and hyperparameter sweeps over one run directory.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod sweep;
