//! Layers, network assembly and training.

pub mod layers;
pub mod model;
pub mod train;

pub use layers::{nll_loss, BatchNorm, Conv3d, CorrLayer, FullyConnected, Lattice, Layer, MaxPool};
pub use model::{finite_difference_check, input_grid, sgd_update, Architecture, CorrSettings, HReluMode, Network, NetworkSpec, Variant};
pub use train::{
    cross_validate, cross_validate_with, evaluate, recalibrate_batch_norm, fold_assignment, train, CrossValidation, Dataset, EpochMetrics, Evaluation,
    FoldResult, TrainConfig,
};
