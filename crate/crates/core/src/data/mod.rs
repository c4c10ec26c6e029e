//! Synthetic datasets with planted target regions and controllable
//! spurious background correlation.

mod image;
mod io;
mod skeleton;

pub(crate) use image::bounding_box;
pub use image::{generate_image_dataset, ImageDataset, ToyDatasetSpec};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use skeleton::{generate_skeleton_dataset, SkeletonDataset, ToySkeletonSpec};

use thiserror::Error;

use crate::synthesis::SynthesisError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: `{field}` {constraint}")]
    InvalidSpec { field: &'static str, constraint: String },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}
