//! Pretext, clustering and self-label training, ensembles and checkpoints.

mod checkpoint;
mod config;
mod ensemble;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::losses::LossError;
use crate::model::ModelError;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use config::{EnsembleSpec, PipelineConfig, Stage, StageParams, TrainConfig};
pub use ensemble::{prepare_pretext, run_member, train_ensemble, EnsembleRun, MemberRun};
pub use train::{
    cluster_probs, embed_dataset, recompute_terms, train_pretext, train_scan, train_selflabel,
    MetricRecord, StageRun,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{stage} stage needs a {expected} checkpoint, got {found}")]
    StageOrder {
        stage: Stage,
        expected: Stage,
        found: Stage,
    },
    #[error("checkpoint was trained on a different dataset")]
    DatasetMismatch,
    #[error("{stage} stage diverged in epoch {epoch}: {detail}")]
    Diverged {
        stage: Stage,
        epoch: usize,
        detail: String,
    },
    #[error("shared pretext stage failed: {0}")]
    PretextFailed(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl PipelineError {
    fn from_step(err: impl Into<PipelineError>, stage: Stage, epoch: usize) -> Self {
        match err.into() {
            PipelineError::Loss(LossError::Autodiff(e @ AutodiffError::NonFinite { .. }))
            | PipelineError::Model(ModelError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                PipelineError::Diverged {
                    stage,
                    epoch,
                    detail: e.to_string(),
                }
            }
            other => other,
        }
    }
}

impl From<AutodiffError> for PipelineError {
    fn from(e: AutodiffError) -> Self {
        PipelineError::Loss(LossError::Autodiff(e))
    }
}
