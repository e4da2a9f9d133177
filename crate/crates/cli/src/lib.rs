//! Batch pipeline around `dia_rescore`: configuration, atomic artifact
//! writing and the subcommand stages.

pub mod config;
pub mod fsio;
pub mod stages;

pub use config::PipelineConfig;
