//! Grid-cell LSTM object detection toolkit.
//!
//! The pipeline: image-space labels are encoded into per-cell slot targets
//! ([`grid`]), predictions and targets are aligned per cell by minimum-cost
//! matching ([`assignment`]), the composite objectness/regression/class loss
//! is evaluated with analytic gradients ([`loss`]), and a per-cell stacked
//! LSTM head ([`decoder`]) turns feature grids into slot predictions.
//! Detections are scored with AP/mAP and column-wise count RMSE ([`eval`]),
//! and [`pipeline`] prepares tiles from large mosaics.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod container;
pub mod decoder;
pub mod detection;
pub mod error;
pub mod eval;
pub mod grid;
pub mod labels;
pub mod loss;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod store;
pub mod tensor;

pub use detection::{Detection, ObjectAnnotation};
pub use error::{Error, Result};
pub use grid::GridSpec;
