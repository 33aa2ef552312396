//! A self-contained single-shot face detector.
//!
//! * [`tensor`] and [`ops`]: NHWC tensors and the convolution primitives.
//! * [`net`]: BlazeBlocks, the 128x128 frontal feature extractor and heads.
//! * [`anchors`]: the 896-anchor lattice and box/keypoint decoding.
//! * [`postprocess`]: blending and suppression tie resolution.
//! * [`metrics`] and [`eval`]: AP, IOD-normalized error, jitter, datasets.
//! * [`analysis`]: multiply-add counts, receptive fields, layer timing.
//! * [`weights`], [`image`], [`detector`]: file formats and the pipeline.

pub mod analysis;
pub mod anchors;
pub mod detection;
pub mod detector;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod postprocess;
pub mod tensor;
pub mod weights;

pub use detection::{BBox, Detection};
pub use detector::{detect, Detector, DetectorConfig};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
pub use weights::WeightStore;
