//! Multi-task learning over hourly ICU-style time series: synthetic cohorts,
//! task definitions, shared encoders with per-task decoders, training
//! regimes, evaluation and hyperparameter search.

pub mod data;
pub mod model;
pub mod runtime;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod tables;
pub mod tasks;
pub mod search;
pub mod train;

pub use error::{MtlbError, Result};
