//! The N-initializations x k-runs experiment grid: configuration, seeding,
//! single-run training, records and gradient traces.

mod config;
pub mod grid;
pub mod record;
pub mod seed;
pub mod trace;
pub mod train;

pub use config::ExperimentConfig;
pub use grid::{grid_cells, run_experiment, run_experiment_with, GridOptions};
pub use record::{read_records, write_records, MetricSelector, RecordsMeta, RunRecord};
pub use trace::{GradientTrace, TraceRow};
pub use train::{extract_abundances, extract_endmembers, prepare_data, train_once};
