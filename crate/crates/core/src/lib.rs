//! Single-camera offside line estimation.
//!
//! The pitch is segmented by color, mowing-stripe boundaries are found with
//! Canny and Hough, their vanishing point is estimated with RANSAC, and
//! player keypoints are projected along lines through that point to decide
//! offside positions. [`synth`] renders scenes with exact ground truth.

pub mod engine;
pub mod io;
pub mod lines;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod segmentation;
pub mod synth;
pub mod vanishing;

pub use engine::{load_annotations, FrameAnnotations, VerdictDocument};
pub use pipeline::{load_config, run_pipeline, FrameResult, PipelineConfig, PipelineError};
pub use raster::Raster;
