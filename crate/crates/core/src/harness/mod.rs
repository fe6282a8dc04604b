//! Training, evaluation protocols and result aggregation.

mod metrics;
mod optim;
mod protocol;
mod report;
mod train;

pub use metrics::{roc_auc, silhouette, threshold_metrics, Confusion, MeanStd, ThresholdMetrics};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use protocol::{
    loso_evaluate, repeated_trials, run_holdout_trial, summarize, trial_seed, HoldoutData,
    LosoConfig, TrialResult, TrialSetup, METRICS,
};
pub use report::{ExperimentReport, AGGREGATION, REPORT_FORMAT, REPORT_VERSION};
pub use train::{bag_embeddings, score_bags, train, EpochTrace, TrainTrace};

use crate::autograd::AutogradError;
use crate::datasets::DatasetError;
use crate::mivat::VatError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("metric: {0}")]
    Metric(String),
    #[error("training set without subject {0} has a single class")]
    SingleClassSplit(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Vat(#[from] VatError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}
