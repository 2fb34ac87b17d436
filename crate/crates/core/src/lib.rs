//! Autoencoder-based hyperspectral unmixing and a laboratory for studying how
//! weight initialization drives training outcomes.
//!
//! The crate is organized bottom-up:
//!
//! - [`lmm`]: linear mixing model types, synthetic scenes and the bundle file format.
//! - [`nn`]: a dense autoencoder with hand-written forward/backward passes,
//!   the four initializers and Adam.
//! - [`metrics`]: MSE/SAD training losses and unmixing quality metrics.
//! - [`harness`]: the N-initializations x k-runs training grid.
//! - [`stats`]: Levene, Kruskal-Wallis, Conover-Iman and the retraining planner.
//! - [`report`]: histogram, trials and summary emission.

pub mod error;
pub mod harness;
pub mod lmm;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
pub use harness::{ExperimentConfig, GradientTrace, MetricSelector, RunRecord};
pub use lmm::{GroundTruth, HsiBundle, NoiseSpec};
pub use nn::{Architecture, InitScheme, Network};
pub use stats::{GroupedScores, RetryPlan, StatReport};
