//! Unsupervised anomaly detection for cloud compute-node performance metrics.
//!
//! Each metric series is cut into sliding history windows. For every window
//! the detector estimates the dominant period (periodogram candidates checked
//! against autocorrelation hills), decomposes the window with STL, and turns
//! period, trend-slope and residual behaviour into three scores in `[0, 1]`
//! that are aggregated into a single anomaly score per timestamp.
//!
//! On top of per-series scores the [`analytics`] module provides the
//! cross-node computations used by the monitoring views: node ranking,
//! spatial and temporal rollups, PCA projection, t-SNE / PCA embeddings,
//! local outlier factors and kernel density fields. [`ingest`] loads CSV
//! traces into an in-memory store with a binary snapshot format, and
//! [`eval`] holds the ROC / scalability harness and a synthetic labeled
//! data generator.

pub mod analytics;
pub mod decomposition;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod periodicity;
pub mod scoring;

pub use error::{Error, Result};
pub use model::{Granularity, HistoryWindow, MetricSeries, NodePath, ScoreRecord};
