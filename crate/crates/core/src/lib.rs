//! Training-free anomaly detection for multivariate time series.
//!
//! A series is turned into wavelet scalograms, collapsed across dimensions,
//! rendered as RGB image tiles and scored against a memory bank of patch
//! features taken from anomaly-free training data.

pub mod aggregation;
pub mod cwt;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod imaging;
pub mod memory_bank;
pub mod npy;
pub mod pipeline;
pub mod render;
pub mod scores;
pub mod series;

pub use error::{Error, ErrorKind, Result};
pub use npy::write_atomic;
pub use pipeline::{Detection, Detector, PipelineConfig};
