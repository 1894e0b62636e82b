//! IO side of the AutoMT engine: model backends, file formats, pipeline
//! stages and the `automt` command line.

pub mod backends;
pub mod fsutil;
pub mod image;
pub mod config;
pub mod extraction;
pub mod store;
pub mod scene;
pub mod followup;
pub mod validation;
pub mod evaluate;
pub mod layout;
pub mod report;
pub mod synth;
pub mod pipeline;
