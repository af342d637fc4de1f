//! Independent reference implementations shared by the property and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use beliefnav::geometry::{GridConfig, Vec3, VoxelCoord};
use beliefnav::navgrid::{GridCell, Passable};
use beliefnav::semantic::{FeatureVector, PatchStats, ScorerWeights, SemanticMap};
use beliefnav::{CameraIntrinsics, LandmarkSet, Occupancy};

/// Row-major boolean grid, `true` = free. Outside reads as blocked.
#[derive(Clone, Debug)]
pub struct BoolGrid {
    pub w: i32,
    pub h: i32,
    pub free: Vec<bool>,
    pub res: f64,
}

impl BoolGrid {
    pub fn is_free(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.w && y < self.h && self.free[(y * self.w + x) as usize]
    }
}

impl Passable for BoolGrid {
    fn passable(&self, c: GridCell) -> bool {
        self.is_free(c.x, c.y)
    }

    fn resolution(&self) -> f64 {
        self.res
    }
}

/// Dijkstra over (straight, diagonal) move counts with the no-corner-cutting
/// rule; returns meters, infinite when disconnected.
pub fn dijkstra(g: &BoolGrid, a: (i32, i32), b: (i32, i32)) -> f64 {
    let key = |s: u32, d: u32| s as f64 + d as f64 * std::f64::consts::SQRT_2;
    let mut best: BTreeMap<(i32, i32), (u32, u32)> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(a, (0, 0));
    heap.push(Reverse((Ord64(0.0), a, 0u32, 0u32)));
    let mut done = BTreeSet::new();
    while let Some(Reverse((_, c, s, d))) = heap.pop() {
        if !done.insert(c) {
            continue;
        }
        if c == b {
            return g.res * key(s, d);
        }
        for dx in -1..=1 {
            for dy in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let n = (c.0 + dx, c.1 + dy);
                if !g.is_free(n.0, n.1) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(g.is_free(c.0 + dx, c.1) && g.is_free(c.0, c.1 + dy)) {
                    continue;
                }
                let (ns, nd) = if diag { (s, d + 1) } else { (s + 1, d) };
                let better = best.get(&n).map_or(true, |&(os, od)| key(ns, nd) < key(os, od));
                if better {
                    best.insert(n, (ns, nd));
                    heap.push(Reverse((Ord64(key(ns, nd)), n, ns, nd)));
                }
            }
        }
    }
    f64::INFINITY
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Ord64(pub f64);

impl Eq for Ord64 {}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn cosine(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let (a, b) = (a.as_slice(), b.as_slice());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Prior belief by explicit loops over voxels, landmarks and stored levels.
pub fn belief_oracle(map: &SemanticMap, lms: &LandmarkSet) -> BTreeMap<VoxelCoord, f64> {
    let mut out = BTreeMap::new();
    for (u, cell) in map.grid.iter() {
        let feats: Vec<&FeatureVector> = cell.slots.iter().flatten().map(|s| &s.feature).collect();
        if feats.is_empty() {
            continue;
        }
        let sim = |e: &FeatureVector| {
            let mut m = f64::NEG_INFINITY;
            for f in &feats {
                m = m.max(cosine(e, f));
            }
            m.max(0.0).min(1.0)
        };
        let mut b = 0.0;
        for level in 0..3 {
            for lm in &lms.levels[level] {
                b += lm.relevance * sim(&lm.embedding);
            }
        }
        b += sim(&lms.target_embedding);
        out.insert(*u, b);
    }
    out
}

/// Parameter interval where the segment `eye + t * d`, `t` in `[0, 1]`,
/// is inside the voxel box; `None` when the overlap has zero length.
fn segment_box(eye: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k] == 0.0 {
            if eye[k] < lo[k] || eye[k] >= hi[k] {
                return None;
            }
        } else {
            let a = (lo[k] - eye[k]) / d[k];
            let b = (hi[k] - eye[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t1 > t0).then_some((t0, t1))
}

/// Voxels whose centers lie in the level camera frustum within `range`,
/// enumerated over the whole bounding cube.
pub fn frustum_voxels(
    eye: &Vec3,
    heading: f64,
    intr: &CameraIntrinsics,
    range: f64,
    grid: &GridConfig,
) -> Vec<VoxelCoord> {
    let r = grid.resolution;
    let lo = grid.discretize(&(eye - Vec3::repeat(range + r)));
    let hi = grid.discretize(&(eye + Vec3::repeat(range + r)));
    let (th, tv) = ((intr.hfov / 2.0).tan(), (intr.vfov / 2.0).tan());
    let fwd = Vec3::new(heading.cos(), heading.sin(), 0.0);
    let left = Vec3::new(-heading.sin(), heading.cos(), 0.0);
    let mut out = Vec::new();
    for x in lo.x.max(grid.min.x)..=hi.x.min(grid.max.x) {
        for y in lo.y.max(grid.min.y)..=hi.y.min(grid.max.y) {
            for z in lo.z.max(grid.min.z)..=hi.z.min(grid.max.z) {
                let u = VoxelCoord::new(x, y, z);
                let v = grid.voxel_center(u) - eye;
                if v.norm() > range {
                    continue;
                }
                let f = v.dot(&fwd);
                if f > 0.0 && v.dot(&left).abs() <= f * th && v.z.abs() <= f * tv {
                    out.push(u);
                }
            }
        }
    }
    out
}

/// Whether the segment from `eye` to the center of `target` meets no
/// occupied voxel before entering `target`, by testing every voxel in the
/// segment's bounding box.
pub fn visible_exact(eye: &Vec3, target: VoxelCoord, grid: &GridConfig, occ: &impl Occupancy) -> bool {
    let c = grid.voxel_center(target);
    let d = c - eye;
    let r = grid.resolution;
    let corner = |u: VoxelCoord| grid.voxel_min_corner(u);
    let Some((t_target, _)) = segment_box(eye, &d, &corner(target), &(corner(target) + Vec3::repeat(r))) else {
        return true;
    };
    let a = grid.discretize(eye);
    let (lx, hx) = (a.x.min(target.x), a.x.max(target.x));
    let (ly, hy) = (a.y.min(target.y), a.y.max(target.y));
    let (lz, hz) = (a.z.min(target.z), a.z.max(target.z));
    for x in lx..=hx {
        for y in ly..=hy {
            for z in lz..=hz {
                let u = VoxelCoord::new(x, y, z);
                if u == target || !occ.is_occupied(u) {
                    continue;
                }
                let lo = corner(u);
                if let Some((t0, _)) = segment_box(eye, &d, &lo, &(lo + Vec3::repeat(r))) {
                    if t0 < t_target {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Level confidences written out directly from the scorer definitions.
pub fn level_scores(p: &PatchStats, w: &ScorerWeights) -> [Option<f64>; 3] {
    if p.point_count == 0 || p.feature.is_none() {
        return [None; 3];
    }
    let n = p.instance_count as f64;
    let v = p.volume;
    let rho = p.point_count as f64 / v;
    let object = (p.instance_count > 0).then(|| rho / n);
    [Some(w.w1 * v + w.w2 * n), Some(w.w3 * n / v + w.w4 * rho), object]
}

/// Expected map after applying frames in order: per voxel and level, the
/// first candidate with the highest score, where each pixel's candidate is
/// its best covering patch (coarser scale on ties).
pub fn semantic_oracle(
    frames: &[(Vec<Option<Vec3>>, Vec<PatchStats>)],
    width: usize,
    w: &ScorerWeights,
    grid: &GridConfig,
) -> BTreeMap<(VoxelCoord, usize), (f64, Vec<f64>)> {
    let mut out: BTreeMap<(VoxelCoord, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for (points, patches) in frames {
        for level in 0..3 {
            for (px, p) in points.iter().enumerate() {
                let Some(p) = p else { continue };
                let u = grid.discretize(p);
                if !grid.contains(u) {
                    continue;
                }
                let (col, row) = (px % width, px / width);
                let mut best: Option<(u32, f64, &PatchStats)> = None;
                for patch in patches {
                    if !patch.rect.contains(col, row) {
                        continue;
                    }
                    let Some(s) = level_scores(patch, w)[level] else { continue };
                    let take = match best {
                        None => true,
                        Some((scale, bs, _)) => s > bs || (s == bs && patch.scale < scale),
                    };
                    if take {
                        best = Some((patch.scale, s, patch));
                    }
                }
                let Some((_, s, patch)) = best else { continue };
                let f = patch.feature.as_ref().unwrap().as_slice().to_vec();
                match out.get(&(u, level)) {
                    Some((cur, _)) if s <= *cur => {}
                    _ => {
                        out.insert((u, level), (s, f));
                    }
                }
            }
        }
    }
    out
}

/// Flattens a semantic map into the oracle's shape.
pub fn semantic_contents(map: &SemanticMap) -> BTreeMap<(VoxelCoord, usize), (f64, Vec<f64>)> {
    let mut out = BTreeMap::new();
    for (u, cell) in map.grid.iter() {
        for (level, slot) in cell.slots.iter().enumerate() {
            if let Some(s) = slot {
                out.insert((*u, level), (s.score, s.feature.as_slice().to_vec()));
            }
        }
    }
    out
}
