//! Labelled datasets: IDX (MNIST) loading, seeded subsampling and a
//! synthetic Gaussian-blob generator.

mod dataset;
pub mod idx;

pub use dataset::{dataset_from_idx_bytes, load_idx, load_mnist_idx, subsample, synthetic_blobs, LabeledDataset, MnistFiles, MNIST_CLASSES};

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("IDX format error in `{field}`: {message}")]
    Format { field: &'static str, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot draw {requested} samples from a dataset of {available}")]
    Size { requested: usize, available: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] NnError),
}
