//! Sentiment classification over aligned language, vision and acoustic
//! sequences: attention graphs between modalities, densely connected graph
//! convolutions over them, and a small reverse-mode autodiff core.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod dcgcn;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod experiment;
mod init;
pub mod metrics;
pub mod model;
pub mod par;
pub mod training;

pub use error::{Error, Result};
