//! Measurement of statistical closeness between anomalous and anomaly-free
//! visual pattern domains.
//!
//! The crate is organised along the measurement pipeline:
//!
//! * [`corpus`] turns annotated inspection images into paired, shape-normalized
//!   defect / anomaly-free foreground / background crops.
//! * [`featstore`] reads and writes the FGAP feature-matrix interchange format
//!   that decouples backbone inference from metric computation.
//! * [`metrics`] computes KL/JS divergence, Mahalanobis distance, 2-Wasserstein
//!   distance, region mutual information and their theoretical bounds.
//! * [`stats`] runs the two-sample homoscedastic one-tailed t-test.
//! * [`report`] aggregates per-class results into tables and plot data.
//!
//! [`pixelfeat`] is a deterministic pixel-grid embedding used when no external
//! backbone features are available, and [`synth`] generates synthetic
//! inspection fixtures with painted defects.

pub mod corpus;
pub mod error;
pub mod featstore;
pub mod metrics;
pub mod pixelfeat;
pub mod report;
pub mod stats;
pub mod synth;

pub(crate) mod util;

pub use corpus::{
    AnnotationManifest, BBox, CropPair, CropSetOutput, Geometry, ImageRecord, PixelPatch,
    RegionAnnotation, SkipEntry,
};
pub use error::{Error, ErrorCategory, Result};
pub use featstore::{BackboneMeta, FeatureMatrix, PairedFeatures, SampleKind};
pub use metrics::{
    BoundDiagnostic, Metric, ProbabilityVector, SetMetricResult, ShrinkageCovariance, SolverMode,
};
pub use report::{ClassAggregate, MetricRecord, Statistic};
pub use stats::{Decision, GroupLabel, MeasurementGroup, TTestResult, Tail};
pub use util::{to_json_bytes, write_atomic, write_json};

/// Default side length of normalized crops.
pub const DEFAULT_TARGET_SIZE: u32 = 64;
/// Default seed for every random placement.
pub const DEFAULT_SEED: u64 = 42;
