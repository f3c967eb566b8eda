//! Training protocol, evaluation metrics, inference and the oracle suite.

mod infer;
mod localization;
mod metrics;
pub mod oracle;
mod train;

use thiserror::Error;

use crate::data::DataError;
use crate::net::NetError;
use crate::optim::OptimError;

pub use infer::{colormap, heatmaps, infer, infer_network, overlay, InferOptions, InferOutput, DEFAULT_OPACITY};
pub use localization::{binarise, localization_score, percentile_90, TOP_FRACTION};
pub use metrics::{
    aggregate_folds, confusion, evaluate, evaluate_images, f1_from, load_images, score_of, validation_score,
    Confusion, LabelledImage, MetricsReport, Selection, METRICS_CSV_HEADER,
};
pub use oracle::{run_oracle_suite, OracleCheck, OracleOptions, OracleReport};
pub use train::{
    select_snapshot, train_fold, train_on_images, training_order, SnapshotSchedule, SnapshotScore, TrainParams,
    TrainRun, DEFAULT_SNAPSHOT_EVERY, PASSES,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("split is empty")]
    EmptySplit,
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("loss became {loss} at iteration {iteration}")]
    DivergedLoss { iteration: usize, loss: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("invalid run parameters: {0}")]
    InvalidRun(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}
