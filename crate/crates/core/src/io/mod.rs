//! Datasets, model files, run configuration and CSV reports.

mod config;
mod csv_out;
mod dataset;
mod model;

pub use config::RunConfig;
pub use csv_out::{
    certificate_table, histogram_table, sharpness_table, trajectory_table, CertificateRow, Table,
    CERTIFICATE_HEADER, HISTOGRAM_HEADER, SHARPNESS_HEADER, TRAJECTORY_HEADER,
};
pub use dataset::{
    gen_synthetic, load_dataset, read_csv_dataset, read_idx_images, read_idx_labels, DataSplit,
    DatasetKind, DatasetSpec, TRAIN_FRACTION,
};
pub use model::{load_model, model_from_json, model_to_json, save_model, MODEL_VERSION};

use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("model layer {layer} has inconsistent dimensions: {detail}")]
    ModelDimension { layer: usize, detail: String },
    #[error("config: {0}")]
    Config(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, err: impl Display) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
