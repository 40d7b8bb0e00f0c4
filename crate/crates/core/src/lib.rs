//! Deep linear networks trained by full-batch gradient descent, with
//! orthogonal and Gaussian initialization and executable checks of their
//! convergence and trapping behaviour.

pub mod data;
pub mod error;
pub mod init;
pub mod linalg;
pub mod metafile;
pub mod network;
pub mod numfmt;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use data::{data_stats, gen_synthetic, reduce_wlog, DataStats, Dataset};
pub use error::{Error, Result};
pub use init::{init_weights, scaling_alpha, DimensionPlan, InitScheme, SchemeKind};
pub use linalg::Matrix;
pub use network::{least_squares_opt, NetworkState};
pub use trainer::{gd_step, theorem_lr, train_run, EtaPolicy, RunRecord, RunStatus, TrainConfig};
