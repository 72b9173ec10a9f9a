//! Training, k-fold cross-validation, clip-level evaluation, confusion
//! analysis, the mixup alpha sweep and PCA export of FC1 activations.

mod crossval;
mod dataset;
mod eval;
mod manifest;
mod pca;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;
use crate::features::FeatureError;
use crate::mixup::MixupError;
use crate::nn::NnError;

pub use crossval::{alpha_sweep, cross_validate, write_sweep_csv, CrossValReport, SweepRow};
pub use dataset::{ClipFeatures, Dataset, FoldSplit};
pub use eval::{
    argmax, confusion_diff, mean_probabilities, predict_clip, segment_probabilities, write_matrix_csv, ClipPrediction,
    EvalReport,
};
pub use manifest::{clip_id_of, Manifest, ManifestRow};
pub use pca::{pca_embed, PcaEmbedding};
pub use train::{
    evaluate_clips, fc1_embeddings, train_fold, write_log_csv, AugmentMode, EpochLog, FoldRun, TrainConfig,
    DEFAULT_BATCH_SIZE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing feature file {}", .0.display())]
    MissingFeatures(PathBuf),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Feature(PathBuf, FeatureError),
    #[error("fold {fold} outside 1..={folds}")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("clip `{0}` has no segments")]
    NoSegments(String),
    #[error("non-finite loss or activations in fold {fold} at epoch {epoch}")]
    NumericFailure { fold: usize, epoch: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("class count mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("training split for fold {fold} contains validation sources {sources:?}")]
    Leak { fold: usize, sources: Vec<String> },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mixup(#[from] MixupError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
