//! Prior belief from landmark relevance, the visibility map and their
//! product posterior.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Result};
use crate::geometry::{CameraModel, CameraIntrinsics, GridConfig, ImagePoint, VoxelCoord};
use crate::observation::Observation;
use crate::semantic::{FeatureVector, HierarchicalFeatureCell, SemanticMap};
use crate::voxel::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkLevel {
    Room,
    Region,
    Object,
}

impl LandmarkLevel {
    pub const ALL: [LandmarkLevel; 3] = [Self::Room, Self::Region, Self::Object];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub text: String,
    /// Relevance weight; each level's weights sum to one.
    pub relevance: f64,
    pub embedding: FeatureVector,
}

/// Landmarks per level plus the target itself (implicit relevance 1).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub levels: [Vec<Landmark>; 3],
    pub target_text: String,
    pub target_embedding: FeatureVector,
}

/// Tolerance on the per-level relevance sum.
pub const RELEVANCE_SUM_TOL: f64 = 1e-6;

impl LandmarkSet {
    pub fn level(&self, level: LandmarkLevel) -> &[Landmark] {
        &self.levels[level.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for level in LandmarkLevel::ALL {
            let lms = self.level(level);
            if lms.is_empty() {
                continue;
            }
            if lms.iter().any(|l| !(0.0..=1.0).contains(&l.relevance)) {
                return Err(invalid_input(format!("{level:?} relevance outside [0, 1]")));
            }
            let sum: f64 = lms.iter().map(|l| l.relevance).sum();
            if (sum - 1.0).abs() > RELEVANCE_SUM_TOL {
                return Err(invalid_input(format!("{level:?} relevances sum to {sum}, not 1")));
            }
        }
        Ok(())
    }

    /// Copy with the given landmark levels emptied.
    pub fn restricted(&self, keep: [bool; 3]) -> Self {
        let mut out = self.clone();
        for (lvl, k) in out.levels.iter_mut().zip(keep) {
            if !k {
                lvl.clear();
            }
        }
        out
    }
}

/// Similarity of a text embedding to a voxel: the best cosine over the
/// voxel's stored levels, clamped to `[0, 1]`.
fn voxel_similarity(embedding: &FeatureVector, cell: &HierarchicalFeatureCell) -> f64 {
    cell.features()
        .map(|f| embedding.cosine(f))
        .fold(f64::NEG_INFINITY, f64::max)
        .clamp(0.0, 1.0)
}

/// Prior belief of one voxel, `None` if it stores no feature.
pub fn voxel_belief(cell: &HierarchicalFeatureCell, landmarks: &LandmarkSet) -> Option<f64> {
    if cell.is_empty() {
        return None;
    }
    let mut b = 0.0;
    for level in &landmarks.levels {
        for lm in level {
            if lm.relevance != 0.0 {
                b += lm.relevance * voxel_similarity(&lm.embedding, cell);
            }
        }
    }
    Some(b + voxel_similarity(&landmarks.target_embedding, cell))
}

/// Prior belief per mapped voxel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeliefMap {
    pub grid: VoxelGrid<f64>,
}

impl BeliefMap {
    pub fn get(&self, u: &VoxelCoord) -> Option<f64> {
        self.grid.get(u).copied()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Recomputes the belief of the listed voxels only.
    pub fn refresh(&mut self, map: &SemanticMap, dirty: &[VoxelCoord], landmarks: &LandmarkSet) {
        for u in dirty {
            match map.grid.get(u).and_then(|c| voxel_belief(c, landmarks)) {
                Some(b) => {
                    self.grid.insert(*u, b);
                }
                None => {
                    self.grid.remove(u);
                }
            }
        }
    }
}

/// Prior belief over every voxel of the semantic map.
pub fn compute_belief(map: &SemanticMap, landmarks: &LandmarkSet) -> BeliefMap {
    BeliefMap {
        grid: map
            .grid
            .iter()
            .filter_map(|(u, c)| voxel_belief(c, landmarks).map(|b| (*u, b)))
            .collect(),
    }
}

/// Depth band where detection is most reliable, with a Gaussian falloff
/// outside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRange {
    pub d_min: f64,
    pub d_max: f64,
    /// Falloff rate outside the band, 1/m^2.
    pub falloff: f64,
}

impl Default for DetectionRange {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            d_max: 4.0,
            falloff: 1.0,
        }
    }
}

impl DetectionRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(invalid_config("detection range needs 0 < d_min < d_max"));
        }
        if !(self.falloff >= 0.0 && self.falloff.is_finite()) {
            return Err(invalid_config("detection falloff must be finite and non-negative"));
        }
        Ok(())
    }

    /// Distance factor: 1 inside the band, Gaussian decay outside.
    pub fn distance_confidence(&self, d: f64) -> f64 {
        if (self.d_min..=self.d_max).contains(&d) {
            1.0
        } else {
            let gap = (d - self.d_min).powi(2).min((d - self.d_max).powi(2));
            (-self.falloff * gap).exp()
        }
    }
}

/// Angular confidence factor `cos^2(angle / fov * pi)`.
fn angular_confidence(angle: f64, fov: f64) -> f64 {
    (angle / fov * std::f64::consts::PI).cos().powi(2)
}

/// Detection confidence of an image point at a given depth: the product of
/// the horizontal, vertical and distance factors.
pub fn pixel_confidence(
    pixel: ImagePoint,
    depth: f64,
    intrinsics: &CameraIntrinsics,
    range: &DetectionRange,
) -> f64 {
    let (theta, phi) = intrinsics.angles(pixel);
    range.distance_confidence(depth)
        * angular_confidence(theta, intrinsics.hfov)
        * angular_confidence(phi, intrinsics.vfov)
}

/// Residual presence likelihood per observed voxel. Unobserved voxels are
/// absent and read as 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisibilityMap {
    pub grid: VoxelGrid<f64>,
}

impl VisibilityMap {
    pub fn get(&self, u: &VoxelCoord) -> f64 {
        self.grid.get(u).copied().unwrap_or(1.0)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Lowers a voxel to `value` if it is unobserved or `value` is strictly
    /// smaller than the stored one. Returns whether the map changed.
    pub fn observe(&mut self, u: VoxelCoord, value: f64) -> bool {
        match self.grid.get_mut(&u) {
            Some(cur) if value < *cur => {
                *cur = value;
                true
            }
            Some(_) => false,
            None => {
                self.grid.insert(u, value);
                true
            }
        }
    }

    /// Folds one frame into the map: each valid pixel writes `1 - C_p` to
    /// its voxel under the min rule.
    pub fn update(
        &mut self,
        obs: &Observation,
        camera: &CameraModel,
        grid: &GridConfig,
        range: &DetectionRange,
        max_depth: f64,
    ) -> usize {
        let points = camera.back_project_all(&obs.depth, &obs.pose, max_depth);
        let mut changed = 0;
        for (i, p) in points.iter().enumerate() {
            let Some(p) = p else { continue };
            let u = grid.discretize(p);
            if !grid.contains(u) {
                continue;
            }
            let px = ImagePoint::pixel_center(i % obs.width, i / obs.width);
            let c = pixel_confidence(px, obs.depth[i], &camera.intrinsics, range);
            if self.observe(u, 1.0 - c) {
                changed += 1;
            }
        }
        changed
    }
}

/// Read access to posterior belief values. `None` marks voxels outside the
/// belief map.
pub trait PosteriorLookup {
    fn posterior_at(&self, u: &VoxelCoord) -> Option<f64>;
}

impl PosteriorLookup for VoxelGrid<f64> {
    fn posterior_at(&self, u: &VoxelCoord) -> Option<f64> {
        self.get(u).copied()
    }
}

/// Posterior computed on demand from a belief map and, optionally, a
/// visibility map (without one the posterior equals the prior).
#[derive(Clone, Copy, Debug)]
pub struct PosteriorView<'a> {
    pub belief: &'a BeliefMap,
    pub visibility: Option<&'a VisibilityMap>,
}

impl PosteriorLookup for PosteriorView<'_> {
    fn posterior_at(&self, u: &VoxelCoord) -> Option<f64> {
        let b = self.belief.get(u)?;
        Some(match self.visibility {
            Some(v) => v.get(u) * b,
            None => b,
        })
    }
}

/// Materialized posterior: visibility (1 when unobserved) times prior.
pub fn posterior(belief: &BeliefMap, vis: &VisibilityMap) -> VoxelGrid<f64> {
    belief
        .grid
        .iter()
        .map(|(u, b)| (*u, vis.get(u) * b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{LevelSlot, SemanticLevel};

    fn unit(v: &[f64]) -> FeatureVector {
        FeatureVector::normalized(v.to_vec()).unwrap()
    }

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::with_hfov(64, 48, 79f64.to_radians(), 0.88)
    }

    fn single_landmark_set(lm: FeatureVector, relevance: f64, target: FeatureVector) -> LandmarkSet {
        LandmarkSet {
            levels: [
                vec![Landmark {
                    text: "a".into(),
                    relevance,
                    embedding: lm,
                }],
                vec![],
                vec![],
            ],
            target_text: "t".into(),
            target_embedding: target,
        }
    }

    fn map_with(feature: FeatureVector) -> SemanticMap {
        let mut m = SemanticMap::new();
        let mut cell = HierarchicalFeatureCell::default();
        cell.slots[SemanticLevel::Object.index()] = Some(LevelSlot { feature, score: 1.0 });
        m.grid.insert(VoxelCoord::new(0, 0, 0), cell);
        m
    }

    #[test]
    fn identical_landmark_gives_unit_belief() {
        let v = unit(&[1.0, 0.0]);
        let set = single_landmark_set(v.clone(), 1.0, unit(&[0.0, 1.0]));
        let b = compute_belief(&map_with(v), &set);
        assert!((b.get(&VoxelCoord::new(0, 0, 0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_relevance_contributes_nothing() {
        let v = unit(&[1.0, 0.0]);
        let set = single_landmark_set(v.clone(), 0.0, unit(&[0.0, 1.0]));
        let b = compute_belief(&map_with(v), &set);
        assert_eq!(b.get(&VoxelCoord::new(0, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn negative_cosines_clamp_to_zero() {
        let v = unit(&[1.0, 0.0]);
        let set = single_landmark_set(unit(&[-1.0, 0.0]), 1.0, unit(&[-1.0, 0.1]));
        let b = compute_belief(&map_with(v), &set);
        assert_eq!(b.get(&VoxelCoord::new(0, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn empty_map_gives_empty_belief() {
        let set = single_landmark_set(unit(&[1.0]), 1.0, unit(&[1.0]));
        assert!(compute_belief(&SemanticMap::new(), &set).is_empty());
    }

    #[test]
    fn relevance_sum_validated() {
        let mut set = single_landmark_set(unit(&[1.0]), 1.0, unit(&[1.0]));
        assert!(set.validate().is_ok());
        set.levels[0][0].relevance = 0.9;
        assert!(set.validate().is_err());
    }

    #[test]
    fn confidence_anchors() {
        let c = cam();
        let r = DetectionRange::default();
        let center = ImagePoint::new(32.0, 24.0);
        assert!((pixel_confidence(center, 2.5, &c, &r) - 1.0).abs() < 1e-12);
        assert!(pixel_confidence(ImagePoint::new(0.0, 24.0), 2.5, &c, &r).abs() < 1e-12);
        let d = r.d_max + 1.0 / r.falloff.sqrt();
        assert!((pixel_confidence(center, d, &c, &r) - (-1.0f64).exp()).abs() < 1e-12);
        let near = r.d_min - 0.5;
        assert!((pixel_confidence(center, near, &c, &r) - (-0.25f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn visibility_keeps_minimum() {
        let mut v = VisibilityMap::default();
        let u = VoxelCoord::new(1, 2, 3);
        assert_eq!(v.get(&u), 1.0);
        assert!(v.observe(u, 1.0 - 0.8));
        assert!(v.observe(u, 1.0 - 0.9));
        assert!(!v.observe(u, 1.0 - 0.5));
        assert!((v.get(&u) - 0.1).abs() < 1e-12);

        let mut v = VisibilityMap::default();
        v.observe(u, 1.0 - 0.8);
        v.observe(u, 1.0 - 0.5);
        assert!((v.get(&u) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn posterior_products() {
        let mut b = BeliefMap::default();
        let (a, z, w) = (VoxelCoord::new(0, 0, 0), VoxelCoord::new(1, 0, 0), VoxelCoord::new(2, 0, 0));
        b.grid.insert(a, 0.8);
        b.grid.insert(z, 0.5);
        b.grid.insert(w, 0.3);
        let mut v = VisibilityMap::default();
        v.observe(a, 0.25);
        v.observe(z, 0.0);
        let p = posterior(&b, &v);
        assert!((p[&a] - 0.2).abs() < 1e-12);
        assert_eq!(p[&z], 0.0);
        assert_eq!(p[&w], 0.3);
        let view = PosteriorView { belief: &b, visibility: Some(&v) };
        assert_eq!(view.posterior_at(&a), Some(p[&a]));
        let prior_only = PosteriorView { belief: &b, visibility: None };
        assert_eq!(prior_only.posterior_at(&a), Some(0.8));
        assert_eq!(prior_only.posterior_at(&VoxelCoord::new(9, 9, 9)), None);
    }
}
