//! Frontier detection and per-frontier observation belief.
//!
//! A frontier view sees every voxel whose center lies inside the camera
//! frustum, within range, with an unobstructed segment from the eye. The
//! frustum is sampled by a fan of rays dense enough to touch every such
//! voxel, so the result does not depend on the fan density.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::belief::PosteriorLookup;
use crate::error::{invalid_config, Result};
use crate::geometry::{ray_walk, CameraIntrinsics, GridConfig, Vec3, VoxelCoord};
use crate::navgrid::{CellState, GridCell, NavGrid};
use crate::voxel::Occupancy;

/// World-frame viewing directions evaluated at every frontier.
pub const VIEW_DIRECTIONS: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Weight of each visible voxel absent from the belief map.
    pub w_unobserved: f64,
    /// Farthest voxel center counted, meters from the eye.
    pub fov_range: f64,
    pub eye_height: f64,
    /// Fan rays per voxel width at `fov_range`, per image axis.
    pub rays_per_voxel: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            w_unobserved: 0.01,
            fov_range: 4.0,
            eye_height: 0.88,
            rays_per_voxel: 2.0,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_unobserved >= 0.0 && self.w_unobserved.is_finite()) {
            return Err(invalid_config("w_unobserved must be finite and non-negative"));
        }
        if !(self.fov_range > 0.0 && self.fov_range.is_finite()) {
            return Err(invalid_config("fov_range must be positive"));
        }
        if !(self.rays_per_voxel >= 1.0) {
            return Err(invalid_config("rays_per_voxel must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub cell: GridCell,
    /// Cell center, z = 0.
    pub position: Vec3,
    /// Number of boundary cells in the cluster.
    pub size: usize,
}

/// Clusters Free cells bordering Unknown ones (4-adjacency) into
/// 8-connected components. Each component of at least `min_size` cells is
/// represented by its member nearest the component centroid. Output is
/// ordered by representative cell index.
pub fn detect_frontiers(grid: &NavGrid, min_size: usize) -> Vec<Frontier> {
    let is_boundary = |c: GridCell| {
        grid.get(c) == CellState::Free
            && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| grid.get(c.offset(dx, dy)) == CellState::Unknown)
    };
    let mut boundary = vec![false; grid.width() * grid.height()];
    for (c, s) in grid.cells() {
        if s == CellState::Free && is_boundary(c) {
            boundary[grid.index(c).expect("cell from grid")] = true;
        }
    }

    let mut seen = vec![false; boundary.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..boundary.len() {
        if !boundary[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            let c = grid.cell_at(i);
            members.push(c);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(j) = grid.index(c.offset(dx, dy)) {
                        if boundary[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        if members.len() < min_size.max(1) {
            continue;
        }
        let n = members.len() as f64;
        let cx = members.iter().map(|c| c.x as f64).sum::<f64>() / n;
        let cy = members.iter().map(|c| c.y as f64).sum::<f64>() / n;
        let rep = *members
            .iter()
            .min_by(|a, b| {
                let da = (a.x as f64 - cx).powi(2) + (a.y as f64 - cy).powi(2);
                let db = (b.x as f64 - cx).powi(2) + (b.y as f64 - cy).powi(2);
                da.total_cmp(&db).then((a.y, a.x).cmp(&(b.y, b.x)))
            })
            .expect("non-empty cluster");
        out.push(Frontier {
            cell: rep,
            position: grid.cell_center(rep),
            size: members.len(),
        });
    }
    out.sort_by_key(|f| grid.index(f.cell));
    out
}

/// Camera-frame coordinates (forward, left, up) of `d` for a level camera
/// facing `heading`.
fn to_camera(d: &Vec3, heading: f64) -> (f64, f64, f64) {
    let (s, c) = heading.sin_cos();
    (d.x * c + d.y * s, -d.x * s + d.y * c, d.z)
}

/// Whether a voxel center is inside the view frustum and range.
pub fn in_view(
    center: &Vec3,
    eye: &Vec3,
    heading: f64,
    intrinsics: &CameraIntrinsics,
    range: f64,
) -> bool {
    let d = center - eye;
    if d.norm_squared() > range * range {
        return false;
    }
    let (f, l, u) = to_camera(&d, heading);
    f > 0.0 && l.abs() <= f * (intrinsics.hfov / 2.0).tan() && u.abs() <= f * (intrinsics.vfov / 2.0).tan()
}

/// Every voxel whose center is in view, ignoring occlusion, gathered by a
/// fan of rays. Sorted.
pub fn fov_candidates(
    eye: &Vec3,
    heading: f64,
    intrinsics: &CameraIntrinsics,
    cfg: &AggregationConfig,
    grid: &GridConfig,
) -> Vec<VoxelCoord> {
    let th = (intrinsics.hfov / 2.0).tan();
    let tv = (intrinsics.vfov / 2.0).tan();
    let per_axis = |t: f64| (cfg.rays_per_voxel * cfg.fov_range * 2.0 * t / grid.resolution).ceil() as usize + 1;
    let (nh, nv) = (per_axis(th), per_axis(tv));
    let (s, c) = heading.sin_cos();
    let reach = cfg.fov_range + grid.resolution;
    let mut found: FxHashSet<VoxelCoord> = FxHashSet::default();
    for i in 0..nh {
        let a = -th + 2.0 * th * i as f64 / (nh - 1) as f64;
        for j in 0..nv {
            let b = -tv + 2.0 * tv * j as f64 / (nv - 1) as f64;
            let dir = Vec3::new(c - a * s, s + a * c, b);
            let _ = ray_walk(eye, &dir, reach, grid, |u| {
                found.insert(u);
                true
            });
        }
    }
    let mut out: Vec<VoxelCoord> = found
        .into_iter()
        .filter(|u| in_view(&grid.voxel_center(*u), eye, heading, intrinsics, cfg.fov_range))
        .collect();
    out.sort_unstable();
    out
}

/// Walks the segment from `eye` to the center of `target`, reporting each
/// voxel entered. Returns true if `target` is reached before any other
/// occupied voxel.
pub fn line_of_sight(
    eye: &Vec3,
    target: VoxelCoord,
    grid: &GridConfig,
    occupancy: &impl Occupancy,
    mut on_visit: impl FnMut(VoxelCoord),
) -> bool {
    let d = grid.voxel_center(target) - eye;
    let len = d.norm();
    if len == 0.0 {
        return true;
    }
    let mut reached = false;
    let _ = ray_walk(eye, &d, len + grid.resolution, grid, |u| {
        on_visit(u);
        if u == target {
            reached = true;
            return false;
        }
        !occupancy.is_occupied(u)
    });
    reached
}

/// Voxels seen from `eye` facing `heading`. Sorted.
pub fn visible_voxels(
    eye: &Vec3,
    heading: f64,
    intrinsics: &CameraIntrinsics,
    cfg: &AggregationConfig,
    grid: &GridConfig,
    occupancy: &impl Occupancy,
) -> Vec<VoxelCoord> {
    fov_candidates(eye, heading, intrinsics, cfg, grid)
        .into_iter()
        .filter(|u| line_of_sight(eye, *u, grid, occupancy, |_| {}))
        .collect()
}

/// Sum of posterior over mapped visible voxels plus `w_unobserved` per
/// unmapped one. `voxels` should be sorted for a reproducible sum.
pub fn sum_view(voxels: &[VoxelCoord], posterior: &impl PosteriorLookup, w_unobserved: f64) -> f64 {
    let mut sum = 0.0;
    let mut unknown = 0usize;
    for u in voxels {
        match posterior.posterior_at(u) {
            Some(b) => sum += b,
            None => unknown += 1,
        }
    }
    sum + unknown as f64 * w_unobserved
}

fn eye_at(frontier: &Vec3, cfg: &AggregationConfig) -> Vec3 {
    Vec3::new(frontier.x, frontier.y, cfg.eye_height)
}

/// Observation belief of one frontier for one viewing direction.
pub fn aggregate_fov(
    frontier: &Vec3,
    heading: f64,
    posterior: &impl PosteriorLookup,
    occupancy: &impl Occupancy,
    intrinsics: &CameraIntrinsics,
    cfg: &AggregationConfig,
    grid: &GridConfig,
) -> f64 {
    let eye = eye_at(frontier, cfg);
    let seen = visible_voxels(&eye, heading, intrinsics, cfg, grid, occupancy);
    sum_view(&seen, posterior, cfg.w_unobserved)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierCandidate {
    pub cell: GridCell,
    pub position: Vec3,
    /// Indexed like [`VIEW_DIRECTIONS`].
    pub per_direction: [f64; 4],
    pub best_direction: f64,
    pub observation_belief: f64,
}

fn candidate(f: &Frontier, per_direction: [f64; 4]) -> FrontierCandidate {
    let mut best = 0;
    for k in 1..4 {
        if per_direction[k] > per_direction[best] {
            best = k;
        }
    }
    FrontierCandidate {
        cell: f.cell,
        position: f.position,
        per_direction,
        best_direction: VIEW_DIRECTIONS[best],
        observation_belief: per_direction[best],
    }
}

/// Scores every frontier in all four directions. Output follows input
/// order; ties in direction go to the earlier one.
pub fn evaluate_frontiers<P, O>(
    frontiers: &[Frontier],
    posterior: &P,
    occupancy: &O,
    intrinsics: &CameraIntrinsics,
    cfg: &AggregationConfig,
    grid: &GridConfig,
) -> Vec<FrontierCandidate>
where
    P: PosteriorLookup + Sync,
    O: Occupancy + Sync,
{
    frontiers
        .par_iter()
        .map(|f| {
            let mut per = [0.0; 4];
            for (k, h) in VIEW_DIRECTIONS.iter().enumerate() {
                per[k] = aggregate_fov(&f.position, *h, posterior, occupancy, intrinsics, cfg, grid);
            }
            candidate(f, per)
        })
        .collect()
}

#[derive(Clone, Debug)]
struct CachedView {
    visible: Vec<VoxelCoord>,
    /// Every voxel entered by a successful line of sight, sorted.
    touched: Vec<VoxelCoord>,
}

/// Reuses visibility computations across steps for frontiers at cell
/// centers.
///
/// Candidate sets are translation-invariant across cell centers, so each
/// direction's set is computed once and shifted. Visible sets stay valid
/// until a voxel on one of their lines of sight becomes occupied; callers
/// report new occupied voxels through [`FovCache::invalidate`]. Occupancy
/// must only ever grow.
#[derive(Clone, Debug)]
pub struct FovCache {
    intrinsics: CameraIntrinsics,
    cfg: AggregationConfig,
    grid: GridConfig,
    eye_z: i32,
    templates: [Vec<VoxelCoord>; 4],
    views: FxHashMap<(GridCell, u8), CachedView>,
}

impl FovCache {
    pub fn new(intrinsics: CameraIntrinsics, cfg: AggregationConfig, grid: GridConfig) -> Self {
        let eye0 = Self::eye_for(&grid, &cfg, GridCell::new(0, 0));
        let e0 = grid.discretize(&eye0);
        let templates = VIEW_DIRECTIONS.map(|h| {
            fov_candidates(&eye0, h, &intrinsics, &cfg, &grid)
                .into_iter()
                .map(|u| VoxelCoord::new(u.x - e0.x, u.y - e0.y, u.z - e0.z))
                .collect()
        });
        Self {
            intrinsics,
            cfg,
            grid,
            eye_z: e0.z,
            templates,
            views: FxHashMap::default(),
        }
    }

    fn eye_for(grid: &GridConfig, cfg: &AggregationConfig, c: GridCell) -> Vec3 {
        let mut e = grid.voxel_center(VoxelCoord::new(c.x, c.y, 0));
        e.z = cfg.eye_height;
        e
    }

    /// Candidate voxels for a frontier at the center of `cell`.
    pub fn candidates(&self, cell: GridCell, direction: usize) -> Vec<VoxelCoord> {
        let mut out: Vec<VoxelCoord> = self.templates[direction]
            .iter()
            .map(|o| VoxelCoord::new(o.x + cell.x, o.y + cell.y, o.z + self.eye_z))
            .filter(|u| self.grid.contains(*u))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn visible(&mut self, cell: GridCell, direction: usize, occupancy: &impl Occupancy) -> &[VoxelCoord] {
        let key = (cell, direction as u8);
        if !self.views.contains_key(&key) {
            let eye = Self::eye_for(&self.grid, &self.cfg, cell);
            let mut visible = Vec::new();
            let mut touched = FxHashSet::default();
            for u in self.candidates(cell, direction) {
                let mut path = Vec::new();
                if line_of_sight(&eye, u, &self.grid, occupancy, |v| path.push(v)) {
                    visible.push(u);
                    touched.extend(path);
                }
            }
            let mut touched: Vec<_> = touched.into_iter().collect();
            touched.sort_unstable();
            self.views.insert(key, CachedView { visible, touched });
        }
        &self.views[&key].visible
    }

    /// Drops cached views that a newly occupied voxel could change.
    pub fn invalidate(&mut self, newly_occupied: &[VoxelCoord]) {
        if newly_occupied.is_empty() {
            return;
        }
        self.views
            .retain(|_, v| !newly_occupied.iter().any(|u| v.touched.binary_search(u).is_ok()));
    }

    /// Keeps only views for the given cells.
    pub fn retain_cells(&mut self, cells: &FxHashSet<GridCell>) {
        self.views.retain(|(c, _), _| cells.contains(c));
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Same as [`evaluate_frontiers`] for frontiers at cell centers, using
    /// and filling the cache.
    pub fn evaluate(
        &mut self,
        frontiers: &[Frontier],
        posterior: &impl PosteriorLookup,
        occupancy: &impl Occupancy,
    ) -> Vec<FrontierCandidate> {
        let w = self.cfg.w_unobserved;
        frontiers
            .iter()
            .map(|f| {
                let mut per = [0.0; 4];
                for (k, p) in per.iter_mut().enumerate() {
                    *p = sum_view(self.visible(f.cell, k, occupancy), posterior, w);
                }
                candidate(f, per)
            })
            .collect()
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }
}
