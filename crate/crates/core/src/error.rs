use thiserror::Error;

use crate::anchors::DecodeError;
use crate::detector::ConfigError;
use crate::eval::DatasetError;
use crate::image::ImageError;
use crate::metrics::MetricsError;
use crate::net::NetError;
use crate::postprocess::PolicyError;
use crate::tensor::TensorError;
use crate::weights::WeightsError;

/// Crate-level error wrapping each stage's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
