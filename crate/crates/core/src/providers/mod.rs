//! Model-facing interfaces plus synthetic and remote implementations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{DetectionRange, LandmarkSet};
use crate::error::Result;
use crate::geometry::CameraIntrinsics;
use crate::observation::{ImageRegion, Observation, PixelRect};
use crate::semantic::FeatureVector;

pub mod concepts;
pub mod remote;
pub mod synthetic;

pub use concepts::{ConceptConfig, ConceptWorldModel};
pub use remote::{RemoteConfig, RemoteProvider};
pub use synthetic::{
    CannedLandmarks, LabelCountSegmenter, LandmarkTable, LandmarkTableEntry, SyntheticDetector,
    SyntheticDetectorConfig, SyntheticEmbedder,
};

/// Text and image-region encoder. Outputs are unit-norm.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<FeatureVector>;

    /// `None` when the region holds nothing embeddable.
    fn embed_patch(&self, region: &ImageRegion<'_>) -> Result<Option<FeatureVector>>;
}

/// Counts object instances inside an image region.
pub trait Segmenter: Send + Sync {
    fn instance_count(&self, region: &ImageRegion<'_>) -> Result<u32>;
}

/// Hierarchical landmarks and the preferred detection range per target.
pub trait LandmarkProvider: Send + Sync {
    fn landmarks(&self, target: &str) -> Result<LandmarkSet>;

    fn detection_range(&self, target: &str) -> Result<DetectionRange>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: PixelRect,
    /// In `[0, 1]`.
    pub confidence: f64,
    /// Row-major indices of the pixels attributed to the target.
    pub pixels: Vec<usize>,
}

pub trait TargetDetector: Send + Sync {
    fn detect(
        &self,
        obs: &Observation,
        target: &str,
        intrinsics: &CameraIntrinsics,
        range: &DetectionRange,
    ) -> Result<Option<Detection>>;
}

/// Second-opinion check on a detection before it becomes the goal.
pub trait DetectionVerifier: Send + Sync {
    fn verify(&self, obs: &Observation, target: &str, detection: &Detection) -> Result<bool>;
}

/// Accepts every detection.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassThroughVerifier;

impl DetectionVerifier for PassThroughVerifier {
    fn verify(&self, _: &Observation, _: &str, _: &Detection) -> Result<bool> {
        Ok(true)
    }
}

/// Everything an episode needs from the model side.
#[derive(Clone)]
pub struct ProviderSet {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub segmenter: Arc<dyn Segmenter>,
    pub landmarks: Arc<dyn LandmarkProvider>,
    pub detector: Arc<dyn TargetDetector>,
    pub verifier: Arc<dyn DetectionVerifier>,
}

impl ProviderSet {
    /// Providers backed by a concept model and a canned landmark table.
    pub fn synthetic(
        model: Arc<ConceptWorldModel>,
        table: LandmarkTable,
        default_range: DetectionRange,
        detector: SyntheticDetectorConfig,
    ) -> Self {
        Self {
            embedder: Arc::new(SyntheticEmbedder::new(model.clone())),
            segmenter: Arc::new(LabelCountSegmenter::default()),
            landmarks: Arc::new(CannedLandmarks::new(model, table, default_range)),
            detector: Arc::new(SyntheticDetector::new(detector)),
            verifier: Arc::new(PassThroughVerifier),
        }
    }

    /// Remote embeddings, landmarks and detection; instance counting stays
    /// local since the wire protocol has no segmentation request.
    pub fn remote(client: Arc<RemoteProvider>) -> Self {
        Self {
            embedder: client.clone(),
            segmenter: Arc::new(LabelCountSegmenter::default()),
            landmarks: client.clone(),
            detector: client,
            verifier: Arc::new(PassThroughVerifier),
        }
    }
}

impl std::fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSet")
            .field("dim", &self.embedder.dim())
            .finish_non_exhaustive()
    }
}
