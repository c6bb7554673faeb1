//! firebench-core: measurement pipeline for detection accuracy and edge
//! efficiency benchmarks.
//!
//! The crate covers four stages of the pipeline:
//!
//! - [`annotations`]: YOLO-format label/prediction parsing and dataset
//!   manifests.
//! - [`metrics`]: IoU matching, precision-recall sweeps, AP and mAP.
//! - [`efficiency`]: power-trace ingestion, energy, FPS, and normalized
//!   energy-delay product.
//! - [`experiments`]: stratified splits and k-folds, experiment lineage
//!   records, and comparison tables.
//!
//! Everything is deterministic: matching order, split shuffles, and table
//! output are pure functions of their inputs and an explicit seed.

pub mod annotations;
pub mod efficiency;
pub mod error;
pub mod experiments;
pub mod metrics;

pub use error::{Error, Result};
