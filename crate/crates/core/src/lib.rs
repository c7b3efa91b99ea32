//! Consensus-based selective classification with small neural classifiers.
//!
//! The crate trains cohorts of small networks from scratch, records
//! per-sample training dynamics, and classifies a sample only when every
//! model (or `k` of `n`) assigns the same class a probability above a
//! threshold. It also carries the diagnostics used to study overfitting:
//! loss decomposition by correctness, softmax scale sensitivity and
//! parameter-space interpolation.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this module name the common instantiations.

pub mod consensus;
pub mod data;
pub mod dynamics;
pub mod io;
pub mod landscape;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use nn::{ArchitectureSpec, LayerSpec, Mode, NnError, ParameterVector, Shape3};
pub use scalar::Scalar;
pub use tensor::{ProbVector, Tensor};
pub use train::{CheckpointSet, EpochMetrics, Evaluation, Hyperparams, TrainConfig, TrainError};
pub use data::{DatasetError, LabeledDataset};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ProbVector32 = ProbVector<f32>;
pub type ProbVector64 = ProbVector<f64>;
pub type ParameterVector32 = ParameterVector<f32>;
pub type ParameterVector64 = ParameterVector<f64>;
pub type LabeledDataset32 = LabeledDataset<f32>;
pub type LabeledDataset64 = LabeledDataset<f64>;
pub type CheckpointSet32 = CheckpointSet<f32>;
pub type CheckpointSet64 = CheckpointSet<f64>;
