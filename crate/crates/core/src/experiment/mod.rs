//! Experiment configs, the results store, grid execution and reports.

pub mod config;
pub mod grid;
pub mod report;
pub mod store;

pub use config::{ExperimentConfig, RegimeKind, CODE_VERSION};
pub use grid::{enumerate, run_grid, run_seed, Cell, GridContext, GridRequest, GridSummary};
pub use store::{JsonlStore, ResultRecord, ResultsStore, Subgroup};
