//! Minimal deterministic neural-network engine.
//!
//! Networks are described by an [`ArchitectureSpec`] and carried around as a
//! flat [`ParameterVector`]; the engine functions ([`forward`], [`backward`],
//! [`sgd_step`]) are pure apart from the explicit random generator used for
//! dropout masks.

mod arch;
mod engine;
mod kernels;
mod ops;
mod params;

pub use arch::{ArchitectureSpec, LayerSpec, Shape3};
pub use engine::{backward, forward, layer_inputs, ForwardOutput, Mode};
pub use ops::{cross_entropy, scale_logits, softmax, LOSS_FLOOR};
pub use params::{init_params, sgd_step, ParameterVector, Segment, SegmentKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
}
