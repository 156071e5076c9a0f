//! File formats, checkpoints, configuration and command pipelines around
//! `specflow-core`.

pub mod checkpoint;
pub mod config;
pub mod exec;
pub mod formats;
pub mod mgf;
pub mod pipeline;
pub mod report;

pub use pipeline::PipelineError;
