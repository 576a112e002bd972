//! Multi-scale maxout CNN for grid-layout tensors.
//!
//! Each MSM-Conv layer runs several stacks of 3x3 convolutions of increasing
//! depth (receptive fields 3, 5, 7, ...) and keeps the element-wise maximum.
//! Everything is computed in f64 on the CPU with exact backpropagation.

pub mod checkpoint;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use network::{msm_conv_forward, Adam, MsmConvLayer, Network, NetworkConfig};
pub use ops::GlobalPool;
pub use tensor::Tensor4;
pub use train::{
    cross_validate, cross_validate_models, majority_vote, run_fold, stratified_folds, train_model, CvReport, EpochRecord, FoldReport,
    TensorDataset, TrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no training samples")]
    EmptyInput,
    #[error("loss diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("fold {fold}: loss diverged at epoch {epoch}")]
    FoldDivergence { fold: usize, epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
