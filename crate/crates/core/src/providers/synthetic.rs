//! Deterministic providers over simulator label images.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{ConceptWorldModel, Detection, EmbeddingProvider, LandmarkProvider, Segmenter, TargetDetector};
use crate::belief::{DetectionRange, Landmark, LandmarkLevel, LandmarkSet};
use crate::error::{invalid_config, Error, Result};
use crate::geometry::{CameraIntrinsics, ImagePoint};
use crate::observation::{ImageRegion, Observation, PixelRect, NO_LABEL};
use crate::semantic::FeatureVector;

/// Embeds text by concept lookup and image regions as the pixel-area
/// weighted mean of their label vectors.
#[derive(Clone, Debug)]
pub struct SyntheticEmbedder {
    model: Arc<ConceptWorldModel>,
}

impl SyntheticEmbedder {
    pub fn new(model: Arc<ConceptWorldModel>) -> Self {
        Self { model }
    }
}

impl EmbeddingProvider for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn embed_text(&self, text: &str) -> Result<FeatureVector> {
        self.model.embed(text)
    }

    fn embed_patch(&self, region: &ImageRegion<'_>) -> Result<Option<FeatureVector>> {
        let hist = region.label_histogram();
        if hist.is_empty() {
            return Ok(None);
        }
        let mut acc = vec![0.0; self.model.dim()];
        for (label, count) in hist {
            let name = region
                .obs
                .label_name(label)
                .ok_or_else(|| Error::UnknownLabel(format!("label id {label}")))?;
            let v = self.model.vector(self.model.index_of(name)?);
            for (a, x) in acc.iter_mut().zip(v.as_slice()) {
                *a += count as f64 * x;
            }
        }
        // Opposed labels can cancel out exactly; treat that as no content.
        Ok(FeatureVector::normalized(acc).ok())
    }
}

/// Counts 4-connected same-label pixel components of at least `min_pixels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCountSegmenter {
    pub min_pixels: usize,
}

impl Default for LabelCountSegmenter {
    fn default() -> Self {
        Self { min_pixels: 4 }
    }
}

impl Segmenter for LabelCountSegmenter {
    fn instance_count(&self, region: &ImageRegion<'_>) -> Result<u32> {
        let r = region.rect;
        let (w, h) = (r.col1 - r.col0, r.row1 - r.row0);
        let at = |c: usize, row: usize| region.obs.labels[(r.row0 + row) * region.obs.width + r.col0 + c];
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut count = 0;
        for start in 0..w * h {
            let label = at(start % w, start / w);
            if seen[start] || label == NO_LABEL {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut size = 0;
            while let Some(i) = stack.pop() {
                size += 1;
                let (c, row) = (i % w, i / w);
                let mut visit = |c: usize, row: usize| {
                    let j = row * w + c;
                    if !seen[j] && at(c, row) == label {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    visit(c - 1, row);
                }
                if c + 1 < w {
                    visit(c + 1, row);
                }
                if row > 0 {
                    visit(c, row - 1);
                }
                if row + 1 < h {
                    visit(c, row + 1);
                }
            }
            if size >= self.min_pixels {
                count += 1;
            }
        }
        Ok(count)
    }
}

/// One target's canned landmark strings and relevances, indexed
/// `[level][slot]` with levels ordered room, region, object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTableEntry {
    pub landmarks: Vec<Vec<String>>,
    pub probabilities: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_range: Option<[f64; 2]>,
}

impl LandmarkTableEntry {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks.len() != 3 || self.probabilities.len() != 3 {
            return Err(invalid_config("landmark entries need exactly three levels"));
        }
        for (names, probs) in self.landmarks.iter().zip(&self.probabilities) {
            if names.len() != probs.len() {
                return Err(invalid_config("landmark and probability rows differ in length"));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(invalid_config("landmark probabilities must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Versioned table of canned landmark entries keyed by target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTable {
    pub version: u32,
    pub targets: BTreeMap<String, LandmarkTableEntry>,
}

const BUILTIN_TABLE: &str = include_str!("../../assets/landmarks.json");

impl LandmarkTable {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_TABLE).expect("bundled landmark table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        for e in t.targets.values() {
            e.validate()?;
        }
        Ok(t)
    }
}

/// Scales a relevance row to sum to one; an all-zero row becomes uniform.
pub fn normalize_row(row: &[f64]) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter().map(|p| p / sum).collect()
    } else {
        vec![1.0 / row.len() as f64; row.len()]
    }
}

/// Builds a landmark set from strings and relevances, embedding each string
/// with `embed`.
pub fn build_landmark_set(
    target: &str,
    landmarks: &[Vec<String>],
    probabilities: &[Vec<f64>],
    embed: impl Fn(&str) -> Result<FeatureVector>,
) -> Result<LandmarkSet> {
    let mut levels: [Vec<Landmark>; 3] = Default::default();
    for level in LandmarkLevel::ALL {
        let i = level.index();
        let alphas = normalize_row(&probabilities[i]);
        for (text, relevance) in landmarks[i].iter().zip(alphas) {
            levels[i].push(Landmark {
                text: text.clone(),
                relevance,
                embedding: embed(text)?,
            });
        }
    }
    Ok(LandmarkSet {
        levels,
        target_text: target.to_owned(),
        target_embedding: embed(target)?,
    })
}

/// Landmarks from a canned table, embedded with the concept model.
#[derive(Clone, Debug)]
pub struct CannedLandmarks {
    model: Arc<ConceptWorldModel>,
    table: LandmarkTable,
    default_range: DetectionRange,
}

impl CannedLandmarks {
    pub fn new(model: Arc<ConceptWorldModel>, table: LandmarkTable, default_range: DetectionRange) -> Self {
        Self {
            model,
            table,
            default_range,
        }
    }
}

impl LandmarkProvider for CannedLandmarks {
    fn landmarks(&self, target: &str) -> Result<LandmarkSet> {
        let embed = |t: &str| self.model.embed(t);
        match self.table.targets.get(target) {
            Some(entry) => {
                entry.validate()?;
                build_landmark_set(target, &entry.landmarks, &entry.probabilities, embed)
            }
            None => {
                warn!("no canned landmarks for `{target}`; using uniform placeholders");
                let names = vec![vec![target.to_owned(); 3]; 3];
                let probs = vec![vec![1.0; 3]; 3];
                build_landmark_set(target, &names, &probs, embed)
            }
        }
    }

    fn detection_range(&self, target: &str) -> Result<DetectionRange> {
        let range = match self.table.targets.get(target).and_then(|e| e.distance_range) {
            Some([d_min, d_max]) => DetectionRange {
                d_min,
                d_max,
                ..self.default_range
            },
            None => self.default_range,
        };
        range.validate()?;
        Ok(range)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDetectorConfig {
    /// Minimum number of visible target pixels.
    pub min_pixels: usize,
    /// Minimum mean detection confidence over those pixels.
    pub min_confidence: f64,
}

impl Default for SyntheticDetectorConfig {
    fn default() -> Self {
        Self {
            min_pixels: 12,
            min_confidence: 0.3,
        }
    }
}

/// Reports the target when enough of its pixels are visible with adequate
/// mean confidence.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticDetector {
    pub cfg: SyntheticDetectorConfig,
}

impl SyntheticDetector {
    pub fn new(cfg: SyntheticDetectorConfig) -> Self {
        Self { cfg }
    }
}

impl TargetDetector for SyntheticDetector {
    fn detect(
        &self,
        obs: &Observation,
        target: &str,
        intrinsics: &CameraIntrinsics,
        range: &DetectionRange,
    ) -> Result<Option<Detection>> {
        let Some(id) = obs.label_id(target) else {
            return Ok(None);
        };
        let pixels: Vec<usize> = (0..obs.labels.len())
            .filter(|&i| obs.labels[i] == id && obs.depth[i] > 0.0)
            .collect();
        if pixels.len() < self.cfg.min_pixels.max(1) {
            return Ok(None);
        }
        let mut rect = PixelRect {
            row0: usize::MAX,
            row1: 0,
            col0: usize::MAX,
            col1: 0,
        };
        let mut total = 0.0;
        for &i in &pixels {
            let (c, r) = (i % obs.width, i / obs.width);
            rect.row0 = rect.row0.min(r);
            rect.row1 = rect.row1.max(r + 1);
            rect.col0 = rect.col0.min(c);
            rect.col1 = rect.col1.max(c + 1);
            total += crate::belief::pixel_confidence(
                ImagePoint::pixel_center(c, r),
                obs.depth[i],
                intrinsics,
                range,
            );
        }
        let confidence = total / pixels.len() as f64;
        if confidence < self.cfg.min_confidence {
            return Ok(None);
        }
        Ok(Some(Detection {
            rect,
            confidence,
            pixels,
        }))
    }
}
