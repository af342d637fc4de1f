//! Box-world indoor simulator: renders depth and label frames and executes
//! the discrete action set.
//!
//! Scene files are JSON:
//!
//! ```json
//! {
//!   "name": "demo",
//!   "extent_min": [0.0, 0.0],
//!   "extent_max": [8.0, 4.0],
//!   "target": "couch",
//!   "boxes": [{"label": "couch", "min": [1.0, 1.0, 0.0], "max": [3.0, 1.9, 0.8]}],
//!   "spawns": [{"x": 6.0, "y": 2.0, "yaw": 3.14159}]
//! }
//! ```
//!
//! Boxes are axis-aligned, in meters, z-up. Boxes reaching into the agent's
//! body height band are obstacles; thinner ones (floors, rugs) are not.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::geometry::{camera_center, wrap_angle, CameraModel, Pose, Vec3};
use crate::observation::{Label, Observation, NO_LABEL};

pub mod generator;

pub use generator::{generate_scene, GeneratorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBox {
    pub fn new(label: impl Into<String>, min: [f64; 3], max: [f64; 3]) -> Self {
        Self {
            label: label.into(),
            min,
            max,
        }
    }

    /// Distance in the xy plane from a point to the box footprint.
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min[0] - x).max(x - self.max[0]).max(0.0);
        let dy = (self.min[1] - y).max(y - self.max[1]).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnPose {
    pub x: f64,
    pub y: f64,
    /// Radians.
    pub yaw: f64,
}

impl SpawnPose {
    pub fn pose(&self) -> Pose {
        Pose::from_xy_yaw(self.x, self.y, self.yaw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub extent_min: [f64; 2],
    pub extent_max: [f64; 2],
    /// Target category; every box with this label is a valid goal.
    pub target: String,
    pub boxes: Vec<SceneBox>,
    pub spawns: Vec<SpawnPose>,
}

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub agent_radius: f64,
    /// Boxes above this height are not obstacles.
    pub agent_height: f64,
    /// Boxes whose top is at or below this height are walkable.
    pub floor_eps: f64,
    pub forward_step: f64,
    pub turn_deg: f64,
    pub pitch_limit_deg: f64,
    /// Hits beyond this planar depth are dropped.
    pub far_clip: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            agent_radius: 0.18,
            agent_height: 1.5,
            floor_eps: 0.05,
            forward_step: 0.25,
            turn_deg: 30.0,
            pitch_limit_deg: 60.0,
            far_clip: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.agent_radius)
            || !pos(self.agent_height)
            || !pos(self.forward_step)
            || !pos(self.turn_deg)
            || !pos(self.far_clip)
            || !(0.0..90.0).contains(&self.pitch_limit_deg)
            || !(self.floor_eps >= 0.0 && self.floor_eps < self.agent_height)
        {
            return Err(invalid_config("invalid simulator configuration"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    LookUp,
    LookDown,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose,
    pub collided: bool,
}

/// Sub-samples per forward step when checking for collisions.
const SWEEP_SAMPLES: usize = 5;

/// Validated, immutable scene.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: SceneSpec,
    cfg: SimConfig,
    vocab: Arc<[String]>,
    labels: Vec<Label>,
    obstacles: Vec<usize>,
    targets: Vec<usize>,
}

impl Scene {
    pub fn new(spec: SceneSpec, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let [x0, y0] = spec.extent_min;
        let [x1, y1] = spec.extent_max;
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite() && x0 < x1 && y0 < y1) {
            return Err(invalid_input("scene extents must be finite and non-empty"));
        }
        for (i, b) in spec.boxes.iter().enumerate() {
            let finite = b.min.iter().chain(&b.max).all(|v| v.is_finite());
            if !finite || (0..3).any(|k| b.min[k] >= b.max[k]) {
                return Err(invalid_input(format!("box {i} ({}) is empty or non-finite", b.label)));
            }
            if b.min[0] < x0 || b.max[0] > x1 || b.min[1] < y0 || b.max[1] > y1 {
                return Err(invalid_input(format!("box {i} ({}) leaves the scene extents", b.label)));
            }
            if b.label.is_empty() {
                return Err(invalid_input(format!("box {i} has an empty label")));
            }
        }
        let mut names: Vec<String> = spec.boxes.iter().map(|b| b.label.clone()).collect();
        names.sort();
        names.dedup();
        if names.len() >= NO_LABEL as usize {
            return Err(invalid_input("too many distinct labels"));
        }
        let labels = spec
            .boxes
            .iter()
            .map(|b| names.binary_search(&b.label).expect("label collected") as Label)
            .collect();
        let obstacles = (0..spec.boxes.len())
            .filter(|&i| {
                let b = &spec.boxes[i];
                b.max[2] > cfg.floor_eps && b.min[2] < cfg.agent_height
            })
            .collect();
        let targets: Vec<usize> = (0..spec.boxes.len())
            .filter(|&i| spec.boxes[i].label == spec.target)
            .collect();
        if targets.is_empty() {
            return Err(invalid_input(format!("no box carries the target label `{}`", spec.target)));
        }
        let scene = Self {
            vocab: names.into(),
            labels,
            obstacles,
            targets,
            spec,
            cfg,
        };
        if scene.spec.spawns.is_empty() {
            return Err(invalid_input("scene has no spawn poses"));
        }
        for (i, s) in scene.spec.spawns.iter().enumerate() {
            if !s.yaw.is_finite() || scene.collides(s.x, s.y) {
                return Err(invalid_input(format!("spawn {i} is blocked or outside the scene")));
            }
        }
        let reachable = scene
            .spec
            .spawns
            .iter()
            .any(|s| scene.oracle_shortest_path(s.x, s.y, 0.1).is_ok());
        if !reachable {
            return Err(invalid_input("target unreachable from every spawn"));
        }
        Ok(scene)
    }

    pub fn load(path: &Path, cfg: SimConfig) -> Result<Self> {
        Self::new(SceneSpec::load(path)?, cfg)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Arc<[String]> {
        &self.vocab
    }

    pub fn target(&self) -> &str {
        &self.spec.target
    }

    pub fn target_boxes(&self) -> impl Iterator<Item = &SceneBox> {
        self.targets.iter().map(|&i| &self.spec.boxes[i])
    }

    /// Distance in the xy plane from a point to the nearest target box.
    pub fn distance_to_target(&self, x: f64, y: f64) -> f64 {
        self.target_boxes()
            .map(|b| b.footprint_distance(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether an agent centered at `(x, y)` overlaps an obstacle or leaves
    /// the extents.
    pub fn collides(&self, x: f64, y: f64) -> bool {
        let r = self.cfg.agent_radius;
        let [x0, y0] = self.spec.extent_min;
        let [x1, y1] = self.spec.extent_max;
        if x - r < x0 || x + r > x1 || y - r < y0 || y + r > y1 {
            return true;
        }
        self.obstacles
            .iter()
            .any(|&i| self.spec.boxes[i].footprint_distance(x, y) < r)
    }

    /// Ray-traces every pixel against all boxes. Ties in depth go to the
    /// earlier box.
    pub fn render(&self, pose: &Pose, camera: &CameraModel) -> Observation {
        let n = camera.width() * camera.height();
        let mut depth = vec![0.0; n];
        let mut labels = vec![NO_LABEL; n];
        let origin = camera_center(pose, &camera.intrinsics);
        let rot = pose.rotation();
        for i in 0..n {
            let dir = rot * camera.pixel_ray(i);
            let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
            let mut best = self.cfg.far_clip;
            let mut hit = None;
            for (k, b) in self.spec.boxes.iter().enumerate() {
                if let Some(t) = slab_entry(&origin, &inv, b) {
                    if t <= best && hit.map_or(true, |_| t < best) {
                        best = t;
                        hit = Some(k);
                    }
                }
            }
            if let Some(k) = hit {
                depth[i] = best;
                labels[i] = self.labels[k];
            }
        }
        Observation {
            width: camera.width(),
            height: camera.height(),
            depth,
            labels,
            vocab: self.vocab.clone(),
            pose: *pose,
        }
    }

    /// Applies one action. Forward moves are swept; a blocked move leaves
    /// the pose unchanged.
    pub fn step(&self, pose: &Pose, action: Action) -> StepOutcome {
        let turn = self.cfg.turn_deg.to_radians();
        let limit = self.cfg.pitch_limit_deg.to_radians();
        let mut next = *pose;
        match action {
            Action::MoveForward => {
                let h = pose.heading() * self.cfg.forward_step;
                let blocked = (1..=SWEEP_SAMPLES).any(|k| {
                    let f = k as f64 / SWEEP_SAMPLES as f64;
                    self.collides(pose.position.x + h.x * f, pose.position.y + h.y * f)
                });
                if blocked {
                    return StepOutcome {
                        pose: *pose,
                        collided: true,
                    };
                }
                next.position += h;
            }
            Action::TurnLeft => next.yaw = wrap_angle(pose.yaw + turn),
            Action::TurnRight => next.yaw = wrap_angle(pose.yaw - turn),
            Action::LookUp => next.pitch = (pose.pitch + turn).min(limit),
            Action::LookDown => next.pitch = (pose.pitch - turn).max(-limit),
            Action::Stop => {}
        }
        StepOutcome {
            pose: next,
            collided: false,
        }
    }

    /// Whether an agent at `(x, y)` is within `success_radius` of a target,
    /// measured from the edge of its body.
    pub fn is_success(&self, x: f64, y: f64, success_radius: f64) -> bool {
        self.distance_to_target(x, y) - self.cfg.agent_radius <= success_radius
    }

    /// Shortest collision-free path length from `(x, y)` to any position
    /// counting as success, on a grid with half the mapping resolution
    /// (0.125 m).
    pub fn oracle_shortest_path(&self, x: f64, y: f64, success_radius: f64) -> Result<f64> {
        if self.is_success(x, y, success_radius) {
            return Ok(0.0);
        }
        let reach = self.cfg.agent_radius + success_radius + FINE_RES * FRAC_1_SQRT_2;
        let grid = FineGrid::new(self);
        grid.dijkstra(x, y, |cx, cy| self.distance_to_target(cx, cy) <= reach)
            .ok_or_else(|| Error::InvalidInput(format!("target `{}` unreachable from ({x}, {y})", self.spec.target)))
    }

    /// Shortest collision-free path length between two points on the fine
    /// grid, or `None` when disconnected.
    pub fn oracle_distance(&self, from: (f64, f64), to: (f64, f64)) -> Option<f64> {
        let grid = FineGrid::new(self);
        let goal = grid.cell(to.0, to.1);
        grid.dijkstra(from.0, from.1, |cx, cy| grid.cell(cx, cy) == goal)
    }
}

/// Entry distance of a ray into a box, or `None` on a miss. The ray
/// direction is given by its componentwise inverse.
fn slab_entry(origin: &Vec3, inv: &Vec3, b: &SceneBox) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        let (a, c) = ((b.min[k] - origin[k]) * inv[k], (b.max[k] - origin[k]) * inv[k]);
        // A NaN arises when the origin lies on a slab plane of a parallel
        // ray; treat that axis as unconstrained.
        let (lo, hi) = if a <= c { (a, c) } else { (c, a) };
        if lo.is_nan() || hi.is_nan() {
            continue;
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 0.0).then_some(t0)
}

pub const FINE_RES: f64 = 0.125;

/// Collision-free cell centers over the scene extents.
struct FineGrid {
    x0: f64,
    y0: f64,
    w: usize,
    h: usize,
    free: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FineGrid {
    fn new(scene: &Scene) -> Self {
        let [x0, y0] = scene.spec.extent_min;
        let [x1, y1] = scene.spec.extent_max;
        let w = ((x1 - x0) / FINE_RES).ceil() as usize;
        let h = ((y1 - y0) / FINE_RES).ceil() as usize;
        let mut free = vec![false; w * h];
        for j in 0..h {
            for i in 0..w {
                let (cx, cy) = (x0 + (i as f64 + 0.5) * FINE_RES, y0 + (j as f64 + 0.5) * FINE_RES);
                free[j * w + i] = !scene.collides(cx, cy);
            }
        }
        Self { x0, y0, w, h, free }
    }

    fn cell(&self, x: f64, y: f64) -> Option<usize> {
        let i = ((x - self.x0) / FINE_RES).floor();
        let j = ((y - self.y0) / FINE_RES).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.w && (j as usize) < self.h)
            .then(|| j as usize * self.w + i as usize)
    }

    fn center(&self, idx: usize) -> (f64, f64) {
        (
            self.x0 + ((idx % self.w) as f64 + 0.5) * FINE_RES,
            self.y0 + ((idx / self.w) as f64 + 0.5) * FINE_RES,
        )
    }

    /// 8-connected Dijkstra without corner cutting. The start cell is
    /// admitted even when its center is blocked.
    fn dijkstra(&self, x: f64, y: f64, is_goal: impl Fn(f64, f64) -> bool) -> Option<f64> {
        let start = self.cell(x, y)?;
        let mut dist = vec![f64::INFINITY; self.free.len()];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Entry(0.0, start));
        while let Some(Entry(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            let (cx, cy) = self.center(i);
            if self.free[i] && is_goal(cx, cy) {
                return Some(d * FINE_RES);
            }
            let (ix, iy) = ((i % self.w) as i64, (i / self.w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let ok = |x: i64, y: i64| {
                        x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h
                            && self.free[y as usize * self.w + x as usize]
                    };
                    let (nx, ny) = (ix + dx, iy + dy);
                    if !ok(nx, ny) || (dx != 0 && dy != 0 && !(ok(ix + dx, iy) && ok(ix, iy + dy))) {
                        continue;
                    }
                    let j = ny as usize * self.w + nx as usize;
                    let nd = d + if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    if nd < dist[j] {
                        dist[j] = nd;
                        heap.push(Entry(nd, j));
                    }
                }
            }
        }
        None
    }
}
