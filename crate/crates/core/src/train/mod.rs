//! Optimization loop, splits, metrics and run configuration.

mod dataset;
mod metrics;
mod optim;
mod run_config;
mod split;
mod trainer;

pub use dataset::{
    parse_manifest, prepare_samples, window_seed, Dataset, DatasetConfig, IngestStats, ManifestEntry, Sample,
    CONFIG_FILE, EVENTS_FILE, MANIFEST_FILE, POSES_FILE,
};
pub use metrics::{
    lower_median, rotation_error_deg, t_plus_r, translation_error, EvalReport, RotationMetric, WindowError,
};
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use run_config::RunConfig;
pub use split::{make_split, Split, SplitMode, SplitSpec};
pub use trainer::{ablation_matrix, evaluate, targets_for, train, EpochRecord, TrainOutcome, LOSS_CSV_HEADER};

use crate::autodiff::AutodiffError;
use crate::event_io::EventIoError;
use crate::kv::KvError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    EventIo(#[from] EventIoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        Self::Model(e.into())
    }
}
