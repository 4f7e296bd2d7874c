//! Std side of the known-item search engine: corpus files, synthetic
//! benchmarks, trajectory generation, evaluation, and the HTTP service.

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod format;
pub mod service;
pub mod stats;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use kis_core as core;
