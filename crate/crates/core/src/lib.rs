//! Calibration toolkit for context-specific volume-delay curves.
//!
//! The library pairs hourly traffic volumes from automated counters with
//! crowd-sourced link travel times, cleans the joint observations with
//! density-based outlier removal, estimates per-link free-flow time and
//! capacity, fits BPR coefficients by nonlinear least squares and
//! quantifies model error stratified by congestion level:
//!
//! - [`ingest`]: counter/metadata parsing, hourly aggregation, pairing
//! - [`harvester`]: query scheduling against a pluggable directions
//!   provider, with file-backed replay
//! - [`cleaning`]: per-site DBSCAN outlier removal and site validity
//! - [`calibrate`]: free-flow and capacity estimators, the Base/DD1/DD2
//!   parameter ladder, damped Gauss-Newton fitting
//! - [`models`]: BPR and DfT TAG speed-flow evaluation
//! - [`evaluate`]: MAE reporting by road class and volume-to-capacity bin
//! - [`synth`]: ground-truth corpus generation for oracle tests
//! - [`pipeline`]: end-to-end orchestration used by the CLI

pub mod calibrate;
pub mod cleaning;
pub mod error;
pub mod evaluate;
pub mod harvester;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use models::{BprParams, Provenance};
pub use types::{
    Direction, HourlyVolume, PairedObservation, RoadClass, SiteKey, SiteMetadata,
    TravelTimeRecord, VehicleRecord,
};
