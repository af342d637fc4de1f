//! Hierarchical semantic voxel map.
//!
//! Each frame is cut into patches at `k_max` scales (scale `k` has
//! `2^(k-1) x 2^(k-1)` patches). Every patch gets an embedding, an instance
//! count and two point-cloud statistics (AABB volume and point density).
//! Three scorers rank patches for the scene, region and object levels; each
//! pixel takes the best-scoring covering patch per level, and each voxel
//! keeps only the highest-scoring feature it has ever received per level.

use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Result};
use crate::geometry::{CameraModel, GridConfig, Vec3, VoxelCoord};
use crate::observation::{Observation, PixelRect};
use crate::providers::{EmbeddingProvider, Segmenter};
use crate::voxel::VoxelGrid;

/// Embedding vector. Cloning shares the underlying buffer.
#[derive(Clone, Debug)]
pub struct FeatureVector {
    data: Arc<[f64]>,
    norm: f64,
}

impl FeatureVector {
    /// Wraps a vector as-is.
    pub fn new(data: Vec<f64>) -> Self {
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self {
            data: data.into(),
            norm,
        }
    }

    /// Scales to unit L2 norm. Fails on zero or non-finite input.
    pub fn normalized(mut data: Vec<f64>) -> Result<Self> {
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid_input("cannot normalize a zero or non-finite vector"));
        }
        data.iter_mut().for_each(|x| *x /= norm);
        Ok(Self::new(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm - 1.0).abs() <= tol
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let n = self.norm * other.norm;
        if n == 0.0 {
            0.0
        } else {
            self.dot(other) / n
        }
    }

    pub fn ptr_eq(&self, other: &FeatureVector) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }
}

impl PartialEq for FeatureVector {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || self.data == other.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticLevel {
    Scene,
    Region,
    Object,
}

impl SemanticLevel {
    pub const ALL: [SemanticLevel; 3] = [Self::Scene, Self::Region, Self::Object];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for ScorerWeights {
    fn default() -> Self {
        Self {
            w1: 0.05,
            w2: 0.1,
            w3: 2.0,
            w4: 0.01,
        }
    }
}

impl ScorerWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.w1, self.w2, self.w3, self.w4] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid_config("scorer weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Score given to patches that cannot be scored for a level.
pub const UNSCORABLE: f64 = f64::NEG_INFINITY;

/// One image patch and its statistics. `row`/`col` are 1-based within the
/// scale's `2^(k-1) x 2^(k-1)` partition.
#[derive(Clone, Debug)]
pub struct PatchStats {
    pub scale: u32,
    pub row: usize,
    pub col: usize,
    pub rect: PixelRect,
    pub instance_count: u32,
    /// AABB volume of the patch point cloud, cubic meters; 0 when empty.
    pub volume: f64,
    pub point_count: usize,
    /// Points per cubic meter; 0 when empty.
    pub density: f64,
    pub feature: Option<FeatureVector>,
}

impl PatchStats {
    pub fn is_scorable(&self) -> bool {
        self.volume > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    /// Number of patch scales.
    pub k_max: u32,
    pub weights: ScorerWeights,
    /// Depth readings beyond this are discarded, meters.
    pub max_depth: f64,
    /// Levels written to the map (scene, region, object).
    pub levels: [bool; 3],
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            weights: ScorerWeights::default(),
            max_depth: 5.0,
            levels: [true; 3],
        }
    }
}

/// Start and end of partition `idx` of `len` into `parts`; the last
/// partition absorbs the remainder.
fn partition(len: usize, parts: usize, idx: usize) -> (usize, usize) {
    let size = len / parts;
    let start = idx * size;
    let end = if idx + 1 == parts { len } else { start + size };
    (start, end)
}

/// Cuts a `width x height` image into patches at scales `1..=k_max` and
/// computes geometric statistics from the back-projected points.
/// Instance counts and features are left empty.
pub fn split_patches_from_points(
    width: usize,
    height: usize,
    points: &[Option<Vec3>],
    k_max: u32,
    resolution: f64,
) -> Result<Vec<PatchStats>> {
    if k_max == 0 {
        return Err(invalid_config("k_max must be at least 1"));
    }
    if points.len() != width * height {
        return Err(invalid_input("point buffer does not match image size"));
    }
    let parts_max = 1usize << (k_max - 1);
    if width / parts_max == 0 || height / parts_max == 0 {
        return Err(invalid_config(format!(
            "k_max = {k_max} yields sub-pixel patches for a {width}x{height} image"
        )));
    }
    let mut out = Vec::new();
    for k in 1..=k_max {
        let parts = 1usize << (k - 1);
        for h in 0..parts {
            let (row0, row1) = partition(height, parts, h);
            for w in 0..parts {
                let (col0, col1) = partition(width, parts, w);
                let rect = PixelRect {
                    row0,
                    row1,
                    col0,
                    col1,
                };
                let mut lo = Vec3::repeat(f64::INFINITY);
                let mut hi = Vec3::repeat(f64::NEG_INFINITY);
                let mut count = 0usize;
                for i in rect.indices(width) {
                    if let Some(p) = points[i] {
                        lo = lo.inf(&p);
                        hi = hi.sup(&p);
                        count += 1;
                    }
                }
                let (volume, density) = if count == 0 {
                    (0.0, 0.0)
                } else {
                    let ext = (hi - lo).map(|e| e.max(resolution));
                    let v = ext.x * ext.y * ext.z;
                    (v, count as f64 / v)
                };
                out.push(PatchStats {
                    scale: k,
                    row: h + 1,
                    col: w + 1,
                    rect,
                    instance_count: 0,
                    volume,
                    point_count: count,
                    density,
                    feature: None,
                });
            }
        }
    }
    Ok(out)
}

/// Splits an observation into multi-scale patches with geometric stats.
pub fn split_patches(
    obs: &Observation,
    camera: &CameraModel,
    k_max: u32,
    resolution: f64,
    max_depth: f64,
) -> Result<Vec<PatchStats>> {
    let points = camera.back_project_all(&obs.depth, &obs.pose, max_depth);
    split_patches_from_points(obs.width, obs.height, &points, k_max, resolution)
}

pub fn count_instances(obs: &Observation, rect: PixelRect, segmenter: &dyn Segmenter) -> Result<u32> {
    segmenter.instance_count(&obs.region(rect))
}

/// Fills instance counts and embeddings for every patch.
pub fn extract_patch_features(
    patches: &mut [PatchStats],
    obs: &Observation,
    embedder: &dyn EmbeddingProvider,
    segmenter: &dyn Segmenter,
) -> Result<()> {
    let filled: Vec<Result<(u32, Option<FeatureVector>)>> = patches
        .par_iter()
        .map(|p| {
            let region = obs.region(p.rect);
            Ok((segmenter.instance_count(&region)?, embedder.embed_patch(&region)?))
        })
        .collect();
    for (p, r) in patches.iter_mut().zip(filled) {
        let (n, f) = r?;
        p.instance_count = n;
        p.feature = f;
    }
    Ok(())
}

/// Level-specific confidence of a patch.
///
/// Scene favors large volumes with many instances, region favors many
/// instances per volume and dense clouds, object favors high density per
/// instance. Returns [`UNSCORABLE`] for empty patches and, at the object
/// level, for patches with no instances.
pub fn score_patch(stats: &PatchStats, level: SemanticLevel, weights: &ScorerWeights) -> f64 {
    if !stats.is_scorable() {
        return UNSCORABLE;
    }
    let n = stats.instance_count as f64;
    let v = stats.volume;
    match level {
        SemanticLevel::Scene => weights.w1 * v + weights.w2 * n,
        SemanticLevel::Region => weights.w3 * (n / v) + weights.w4 * stats.density,
        SemanticLevel::Object => {
            if stats.instance_count == 0 {
                UNSCORABLE
            } else {
                stats.density / n
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSelection {
    /// Index into the patch list.
    pub patch: usize,
    pub score: f64,
}

/// For every pixel, the best-scoring covering patch at `level`. Patches
/// without a feature or with an unscorable result are skipped; ties go to
/// the coarser scale.
pub fn select_per_pixel(
    patches: &[PatchStats],
    level: SemanticLevel,
    weights: &ScorerWeights,
    width: usize,
    height: usize,
) -> Vec<Option<PixelSelection>> {
    let mut sel: Vec<Option<PixelSelection>> = vec![None; width * height];
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&i| patches[i].scale);
    for i in order {
        let p = &patches[i];
        if p.feature.is_none() {
            continue;
        }
        let score = score_patch(p, level, weights);
        if score == UNSCORABLE {
            continue;
        }
        for px in p.rect.indices(width) {
            match sel[px] {
                Some(cur) if score <= cur.score => {}
                _ => sel[px] = Some(PixelSelection { patch: i, score }),
            }
        }
    }
    sel
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSlot {
    pub feature: FeatureVector,
    pub score: f64,
}

/// Best feature and its score per semantic level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HierarchicalFeatureCell {
    pub slots: [Option<LevelSlot>; 3],
}

impl HierarchicalFeatureCell {
    pub fn slot(&self, level: SemanticLevel) -> Option<&LevelSlot> {
        self.slots[level.index()].as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureVector> {
        self.slots.iter().flatten().map(|s| &s.feature)
    }
}

/// The hierarchical semantic voxel map plus the set of voxels changed since
/// the last [`SemanticMap::take_dirty`].
#[derive(Clone, Debug, Default)]
pub struct SemanticMap {
    pub grid: VoxelGrid<HierarchicalFeatureCell>,
    dirty: FxHashSet<VoxelCoord>,
}

impl SemanticMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Changed voxels in ascending order; clears the set.
    pub fn take_dirty(&mut self) -> Vec<VoxelCoord> {
        let mut v: Vec<_> = self.dirty.drain().collect();
        v.sort_unstable();
        v
    }

    /// Writes per-pixel selections into the map. Pixels are processed level
    /// by level in row-major order; a slot is replaced only on a strictly
    /// higher score. Returns the number of slot writes.
    pub fn apply_frame(
        &mut self,
        points: &[Option<Vec3>],
        patches: &[PatchStats],
        weights: &ScorerWeights,
        width: usize,
        height: usize,
        grid: &GridConfig,
        levels: [bool; 3],
    ) -> usize {
        let voxels: Vec<Option<VoxelCoord>> = points
            .iter()
            .map(|p| p.map(|p| grid.discretize(&p)).filter(|u| grid.contains(*u)))
            .collect();
        let mut writes = 0;
        for level in SemanticLevel::ALL {
            if !levels[level.index()] {
                continue;
            }
            let sel = select_per_pixel(patches, level, weights, width, height);
            for (px, s) in sel.iter().enumerate() {
                let (Some(s), Some(u)) = (s, voxels[px]) else {
                    continue;
                };
                let cell = self.grid.entry_or_insert_with(u, Default::default);
                let slot = &mut cell.slots[level.index()];
                let replace = match slot {
                    None => true,
                    Some(cur) => s.score > cur.score,
                };
                if replace {
                    *slot = Some(LevelSlot {
                        feature: patches[s.patch]
                            .feature
                            .clone()
                            .expect("selected patches carry features"),
                        score: s.score,
                    });
                    self.dirty.insert(u);
                    writes += 1;
                }
            }
        }
        writes
    }

    /// Full per-frame update: patching, provider calls, selection and
    /// voxel writes.
    pub fn update(
        &mut self,
        obs: &Observation,
        camera: &CameraModel,
        grid: &GridConfig,
        cfg: &SemanticConfig,
        embedder: &dyn EmbeddingProvider,
        segmenter: &dyn Segmenter,
    ) -> Result<usize> {
        let points = camera.back_project_all(&obs.depth, &obs.pose, cfg.max_depth);
        let mut patches =
            split_patches_from_points(obs.width, obs.height, &points, cfg.k_max, grid.resolution)?;
        extract_patch_features(&mut patches, obs, embedder, segmenter)?;
        Ok(self.apply_frame(
            &points,
            &patches,
            &cfg.weights,
            obs.width,
            obs.height,
            grid,
            cfg.levels,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(volume: f64, n: u32, density: f64) -> PatchStats {
        PatchStats {
            scale: 1,
            row: 1,
            col: 1,
            rect: PixelRect {
                row0: 0,
                row1: 1,
                col0: 0,
                col1: 1,
            },
            instance_count: n,
            volume,
            point_count: 1,
            density,
            feature: None,
        }
    }

    #[test]
    fn scorer_values() {
        let w = ScorerWeights::default();
        assert!((score_patch(&stats(10.0, 5, 0.0), SemanticLevel::Scene, &w) - 1.0).abs() < 1e-12);
        assert!((score_patch(&stats(2.0, 4, 100.0), SemanticLevel::Region, &w) - 5.0).abs() < 1e-12);
        assert!((score_patch(&stats(1.0, 5, 50.0), SemanticLevel::Object, &w) - 10.0).abs() < 1e-12);
        assert_eq!(score_patch(&stats(1.0, 0, 50.0), SemanticLevel::Object, &w), UNSCORABLE);
        for level in SemanticLevel::ALL {
            assert_eq!(score_patch(&stats(0.0, 3, 0.0), level, &w), UNSCORABLE);
        }
    }

    #[test]
    fn patch_counts_per_scale() {
        let pts = vec![Some(Vec3::new(1.0, 0.0, 0.0)); 16 * 12];
        let p = split_patches_from_points(16, 12, &pts, 3, 0.25).unwrap();
        assert_eq!(p.len(), 21);
        assert_eq!(p.iter().filter(|p| p.scale == 3).count(), 16);
        assert!(split_patches_from_points(16, 12, &pts, 5, 0.25).is_err());
        assert!(split_patches_from_points(16, 12, &pts, 0, 0.25).is_err());
    }

    #[test]
    fn remainder_goes_to_last_patch() {
        let pts = vec![None; 7 * 5];
        let p = split_patches_from_points(7, 5, &pts, 2, 0.25).unwrap();
        let last = p.last().unwrap();
        assert_eq!((last.rect.row0, last.rect.row1), (2, 5));
        assert_eq!((last.rect.col0, last.rect.col1), (3, 7));
        let covered: usize = p.iter().filter(|p| p.scale == 2).map(|p| p.rect.area()).sum();
        assert_eq!(covered, 35);
    }

    #[test]
    fn empty_patch_is_unscorable() {
        let pts = vec![None; 4 * 4];
        let p = split_patches_from_points(4, 4, &pts, 1, 0.25).unwrap();
        assert_eq!(p[0].volume, 0.0);
        assert_eq!(p[0].density, 0.0);
        assert!(!p[0].is_scorable());
    }

    #[test]
    fn planar_patch_volume_is_clamped() {
        // All points on the plane z = 1: the z extent clamps to one voxel.
        let mut pts = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                pts.push(Some(Vec3::new(c as f64 * 0.5, r as f64 * 0.5, 1.0)));
            }
        }
        let p = split_patches_from_points(4, 4, &pts, 1, 0.25).unwrap();
        assert!((p[0].volume - 1.5 * 1.5 * 0.25).abs() < 1e-12);
        assert!((p[0].density - 16.0 / p[0].volume).abs() < 1e-9);
    }

    fn feature(x: f64) -> Option<FeatureVector> {
        Some(FeatureVector::new(vec![x]))
    }

    #[test]
    fn single_scale_takes_whole_image_feature() {
        let pts = vec![Some(Vec3::new(1.0, 2.0, 3.0)); 4 * 4];
        let mut p = split_patches_from_points(4, 4, &pts, 1, 0.25).unwrap();
        p[0].feature = feature(1.0);
        p[0].instance_count = 2;
        let sel = select_per_pixel(&p, SemanticLevel::Object, &ScorerWeights::default(), 4, 4);
        assert!(sel.iter().all(|s| s.map(|s| s.patch) == Some(0)));
    }

    #[test]
    fn finer_patch_wins_when_it_scores_higher_and_ties_go_coarse() {
        let mut p = vec![stats(8.0, 4, 2.0), stats(1.0, 1, 16.0)];
        p[0].rect = PixelRect { row0: 0, row1: 4, col0: 0, col1: 4 };
        p[1].scale = 2;
        p[1].rect = PixelRect { row0: 0, row1: 2, col0: 0, col1: 2 };
        p[0].feature = feature(1.0);
        p[1].feature = feature(2.0);
        let w = ScorerWeights::default();
        // Object: coarse 2/4 = 0.5, fine 16/1 = 16.
        let sel = select_per_pixel(&p, SemanticLevel::Object, &w, 4, 4);
        assert_eq!(sel[0].unwrap().patch, 1);
        assert_eq!(sel[5].unwrap().patch, 1);
        assert_eq!(sel[15].unwrap().patch, 0);

        p[1].density = 2.0;
        p[1].instance_count = 4;
        // Both score 0.5 at the object level: coarse wins.
        let sel = select_per_pixel(&p, SemanticLevel::Object, &w, 4, 4);
        assert_eq!(sel[0].unwrap().patch, 0);
    }

    fn one_patch_frame(feature_value: f64, density: f64) -> (Vec<Option<Vec3>>, Vec<PatchStats>) {
        let pts = vec![Some(Vec3::new(0.1, 0.1, 0.1)); 2 * 2];
        let mut p = split_patches_from_points(2, 2, &pts, 1, 0.25).unwrap();
        p[0].feature = feature(feature_value);
        p[0].instance_count = 1;
        p[0].density = density;
        (pts, p)
    }

    #[test]
    fn map_keeps_strictly_better_scores_per_level() {
        let g = GridConfig::default();
        let w = ScorerWeights::default();
        let mut map = SemanticMap::new();
        let (pts, p) = one_patch_frame(1.0, 10.0);
        map.apply_frame(&pts, &p, &w, 2, 2, &g, [true; 3]);
        let u = VoxelCoord::new(0, 0, 0);
        let before = map.grid.get(&u).unwrap().clone();
        assert!(before.slots.iter().all(Option::is_some));
        assert_eq!(map.take_dirty(), vec![u]);

        // Same frame again: no change, nothing dirty.
        assert_eq!(map.apply_frame(&pts, &p, &w, 2, 2, &g, [true; 3]), 0);
        assert_eq!(map.grid.get(&u).unwrap(), &before);
        assert!(map.take_dirty().is_empty());

        // Higher density raises region and object scores but not scene.
        let (pts, p) = one_patch_frame(2.0, 20.0);
        map.apply_frame(&pts, &p, &w, 2, 2, &g, [true; 3]);
        let after = map.grid.get(&u).unwrap();
        assert_eq!(after.slot(SemanticLevel::Scene), before.slot(SemanticLevel::Scene));
        assert_eq!(after.slot(SemanticLevel::Region).unwrap().feature.as_slice(), &[2.0]);
        assert_eq!(after.slot(SemanticLevel::Object).unwrap().feature.as_slice(), &[2.0]);
    }

    #[test]
    fn disabled_levels_are_never_written() {
        let g = GridConfig::default();
        let mut map = SemanticMap::new();
        let (pts, p) = one_patch_frame(1.0, 10.0);
        map.apply_frame(&pts, &p, &ScorerWeights::default(), 2, 2, &g, [false, true, false]);
        let c = map.grid.get(&VoxelCoord::new(0, 0, 0)).unwrap();
        assert!(c.slot(SemanticLevel::Scene).is_none());
        assert!(c.slot(SemanticLevel::Region).is_some());
        assert!(c.slot(SemanticLevel::Object).is_none());
    }
}
