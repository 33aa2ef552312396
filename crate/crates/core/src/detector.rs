//! End-to-end detector: features, heads, decoding and tie resolution.

use thiserror::Error;

use crate::anchors::{decode, generate_anchors, Anchor, DEFAULT_MIN_SCORE};
use crate::detection::Detection;
use crate::error::Result;
use crate::metrics::DEFAULT_JITTER_OFFSETS;
use crate::net::{extract_features, predict_raw, NetworkSpec, RawPredictions};
use crate::postprocess::{resolve, TiePolicy};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Which camera the model targets. Only the frontal model is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraProfile {
    #[default]
    Frontal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("min score {0} is outside [0, 1]")]
    MinScore(f32),
    #[error("min face area {0} is outside [0, 1]")]
    MinFaceArea(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub min_score: f32,
    pub tie: TiePolicy,
    pub jitter_offsets: Vec<(i32, i32)>,
    pub camera: CameraProfile,
    /// Faces and predictions with a smaller normalized box area are ignored
    /// during evaluation.
    pub min_face_area: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_score: DEFAULT_MIN_SCORE,
            tie: TiePolicy::default(),
            jitter_offsets: DEFAULT_JITTER_OFFSETS.to_vec(),
            camera: CameraProfile::Frontal,
            min_face_area: 0.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(ConfigError::MinScore(self.min_score));
        }
        if !(0.0..=1.0).contains(&self.min_face_area) {
            return Err(ConfigError::MinFaceArea(self.min_face_area));
        }
        Ok(())
    }
}

pub struct Detector {
    spec: NetworkSpec,
    weights: WeightStore,
    anchors: Vec<Anchor>,
    config: DetectorConfig,
}

impl Detector {
    /// Checks the config and that `weights` covers every layer of the
    /// frontal network with correctly shaped tensors.
    pub fn new(weights: WeightStore, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let spec = match config.camera {
            CameraProfile::Frontal => NetworkSpec::frontal(),
        };
        weights.validate_against(&spec)?;
        Ok(Self {
            spec,
            weights,
            anchors: generate_anchors(),
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn raw(&self, image: &Tensor) -> Result<RawPredictions> {
        let maps = extract_features(&self.spec, image, &self.weights)?;
        Ok(predict_raw(&self.spec, &maps, &self.weights)?)
    }

    /// Detections sorted by descending score.
    pub fn detect(&self, image: &Tensor) -> Result<Vec<Detection>> {
        let raw = self.raw(image)?;
        let decoded = decode(&raw.scores, &raw.regressors, &self.anchors, self.config.min_score)?;
        Ok(resolve(&decoded, &self.config.tie))
    }
}

pub fn detect(image: &Tensor, weights: &WeightStore, config: &DetectorConfig) -> Result<Vec<Detection>> {
    Detector::new(weights.clone(), config.clone())?.detect(image)
}
