//! Filesystem, configuration and command-line layer over `patchmix-core`:
//! dataset and model checkpoints, CIFAR ingestion, the four-phase guided
//! pipeline with its run directory, robustness evaluation, the ablation
//! grid and the toy decision-boundary demo.

pub use patchmix_core as core;

pub mod ablation;
pub mod config;
pub mod demo;
pub mod error;
pub mod eval;
pub mod formats;
pub mod parallel;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{Error, Result};
