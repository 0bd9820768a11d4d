//! Building damage mapping from SAR amplitude time series.
//!
//! The crate covers the whole desk-scale pipeline: acquisition windows and
//! label assignment ([`temporal`]), raster and vector I/O ([`geodata`]),
//! per-pixel summary features ([`features`]), a random forest classifier
//! ([`forest`]), the pixel-wise t-test baseline ([`pwtt`]), dense tiled
//! inference ([`inference`]), building-level aggregation ([`buildings`]),
//! evaluation and threshold calibration ([`evaluation`]) and a seeded
//! synthetic scenario generator ([`synthgen`]).

pub mod buildings;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod geodata;
pub mod geometry;
pub mod inference;
pub mod pipeline;
pub mod pwtt;
pub mod synthgen;
pub mod temporal;
mod workers;

pub use features::{FeatureVector, SeriesSegment, Window, FEATURE_ORDER_TAG};
pub use forest::{ForestConfig, ForestModel};
pub use geodata::{GeoTransform, PeriodMap, ProbabilityMap, RasterStack};
pub use temporal::{assign_label, interval, Label, LabelContext, TimeInterval};
