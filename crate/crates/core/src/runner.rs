//! Episode loop: spin, map updates, frontier scoring and sequencing, local
//! goal following, detection handoff and metrics.

use std::io::Write;
use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefMap, LandmarkSet, PosteriorView, VisibilityMap};
use crate::error::{invalid_config, Error, Result};
use crate::frontier::{detect_frontiers, AggregationConfig, FovCache, Frontier};
use crate::geometry::{camera_center, wrap_angle, CameraIntrinsics, CameraModel, GridConfig, Pose, Vec3, VoxelCoord};
use crate::navgrid::{CellState, GridCell, NavGrid, NavGridConfig, Passable, Traversability};
use crate::planner::{anneal_plan, astar_distance, astar_path, AnnealConfig, PlannedFrontier, PlanningInstance};
use crate::providers::ProviderSet;
use crate::semantic::{SemanticConfig, SemanticMap};
use crate::simenv::{Action, Scene};
use crate::voxel::DenseOccupancy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    /// Expected-cost sequencing by simulated annealing.
    Anneal,
    /// Always head for the frontier with the highest observation belief.
    Greedy,
    /// Commit to a uniformly random frontier until it is reached or gone.
    RandomFrontier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Distance from the agent's body to the target that counts as found.
    pub success_radius: f64,
    /// Overrides the scene's target category.
    pub target: Option<String>,
    pub seed: u64,
    /// Index into the scene's spawn list.
    pub spawn: usize,
    pub camera: CameraIntrinsics,
    pub resolution: f64,
    pub semantic: SemanticConfig,
    pub navgrid: NavGridConfig,
    pub aggregation: AggregationConfig,
    pub anneal: AnnealConfig,
    pub planner: PlannerMode,
    /// Discount observed space with the visibility map.
    pub use_visibility: bool,
    /// Landmark levels kept (room, region, object).
    pub landmark_levels: [bool; 3],
    pub min_frontier_size: usize,
    /// Frontiers passed to the sequencer, best observation belief first.
    pub max_frontiers: usize,
    /// Body distance to the target below which short action sequences are
    /// searched for the final approach.
    pub approach_radius: f64,
    pub heading_tolerance_deg: f64,
    pub spin: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            success_radius: 0.1,
            target: None,
            seed: 0,
            spawn: 0,
            camera: CameraIntrinsics::with_hfov(64, 48, 79f64.to_radians(), 0.88),
            resolution: 0.25,
            semantic: SemanticConfig::default(),
            navgrid: NavGridConfig::default(),
            aggregation: AggregationConfig::default(),
            anneal: AnnealConfig::default(),
            planner: PlannerMode::Anneal,
            use_visibility: true,
            landmark_levels: [true; 3],
            min_frontier_size: 2,
            max_frontiers: 10,
            approach_radius: 1.0,
            heading_tolerance_deg: 15.0,
            spin: true,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(invalid_config("max_steps must be positive"));
        }
        if !(self.success_radius > 0.0 && self.success_radius.is_finite()) {
            return Err(invalid_config("success_radius must be positive"));
        }
        if !(self.resolution > 0.0) || self.max_frontiers == 0 {
            return Err(invalid_config("resolution and max_frontiers must be positive"));
        }
        self.camera.validate()?;
        self.semantic.weights.validate()?;
        self.navgrid.validate()?;
        self.aggregation.validate()?;
        self.anneal.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    /// Stopped outside the success radius.
    FalseStop,
    StepLimit,
    NoFrontiers,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene: String,
    pub target: String,
    pub seed: u64,
    pub success: bool,
    pub path_length: f64,
    pub optimal_length: f64,
    pub steps: usize,
    pub spl: f64,
    pub termination: Termination,
    pub collisions: usize,
    /// Steps taken while exploring; each triggers exactly one plan.
    pub explore_steps: usize,
    pub planner_calls: usize,
    pub detected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `optimal / max(path, optimal)` on success, else 0.
pub fn spl(success: bool, path: f64, optimal: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = path.max(optimal);
    if denom <= 0.0 {
        1.0
    } else {
        optimal / denom
    }
}

#[derive(Clone, Debug, Serialize)]
struct TraceRecord<'a> {
    step: usize,
    x: f64,
    y: f64,
    yaw: f64,
    mode: &'a str,
    action: Action,
    collided: bool,
    goal: Option<[f64; 2]>,
    plan_cost: Option<f64>,
    frontiers: usize,
}

/// Maps held at the end of an episode.
#[derive(Clone, Debug)]
pub struct EpisodeMaps {
    pub grid: GridConfig,
    pub semantic: SemanticMap,
    pub belief: BeliefMap,
    pub visibility: VisibilityMap,
    pub navgrid: NavGrid,
}

/// Outcome of asking the local planner for an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goto {
    Act(Action),
    Arrived,
    /// No path on the current map; the caller should replan.
    Unreachable,
}

/// Distance from the agent to a goal cell center within which the goal
/// counts as reached.
pub const ARRIVAL_RADIUS: f64 = 0.3;
const LOOKAHEAD_CELLS: usize = 4;

fn heading_action(pose: &Pose, to: &Vec3, tol: f64) -> Action {
    let err = wrap_angle((to.y - pose.position.y).atan2(to.x - pose.position.x) - pose.yaw);
    if err.abs() <= tol {
        Action::MoveForward
    } else if err > 0.0 {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

fn segment_clear(grid: &impl Passable, nav: &NavGrid, a: &Vec3, b: &Vec3) -> bool {
    let d = (b - a).norm();
    let n = (d / (grid.resolution() * 0.25)).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let p = a + (b - a) * (k as f64 / n as f64);
        grid.passable(nav.cell_of(&p))
    })
}

/// Follows the A* route to `goal`: turns toward the next waypoint when the
/// heading error exceeds `tol` radians, otherwise moves forward.
pub fn local_goto(pose: &Pose, goal: GridCell, grid: &impl Passable, nav: &NavGrid, tol: f64) -> Result<Goto> {
    let target = nav.cell_center(goal);
    let here = Vec3::new(pose.position.x, pose.position.y, 0.0);
    if (target - here).norm() <= ARRIVAL_RADIUS {
        return Ok(Goto::Arrived);
    }
    let Some((_, path)) = astar_path(grid, nav.cell_of(&here), goal)? else {
        return Ok(Goto::Unreachable);
    };
    let mut waypoint = nav.cell_center(*path.get(1).unwrap_or(&goal));
    for c in path.iter().skip(2).take(LOOKAHEAD_CELLS - 1) {
        let w = nav.cell_center(*c);
        if !segment_clear(grid, nav, &here, &w) {
            break;
        }
        waypoint = w;
    }
    Ok(Goto::Act(heading_action(pose, &waypoint, tol)))
}

/// Surface points attributed to the target, thinned on a 5 cm xy lattice.
#[derive(Clone, Debug, Default)]
struct TargetTrack {
    points: Vec<Vec3>,
    keys: FxHashSet<(i64, i64)>,
    cells: FxHashSet<GridCell>,
}

impl TargetTrack {
    const LATTICE: f64 = 0.05;

    fn add(&mut self, p: Vec3, cell: GridCell) {
        let k = ((p.x / Self::LATTICE).floor() as i64, (p.y / Self::LATTICE).floor() as i64);
        if self.keys.insert(k) {
            self.points.push(p);
        }
        self.cells.insert(cell);
    }

    fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance in the xy plane to the nearest point, and that point.
    fn nearest(&self, x: f64, y: f64) -> (f64, Vec3) {
        self.points
            .iter()
            .map(|p| ((p.x - x).hypot(p.y - y), *p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty track")
    }
}

struct EpisodeState<'a> {
    scene: &'a Scene,
    cfg: &'a EpisodeConfig,
    providers: &'a ProviderSet,
    target: String,
    camera: CameraModel,
    grid: GridConfig,
    landmarks: LandmarkSet,
    range: crate::belief::DetectionRange,
    semantic: SemanticMap,
    belief: BeliefMap,
    visibility: VisibilityMap,
    nav: NavGrid,
    occupancy: DenseOccupancy,
    fov: FovCache,
    track: TargetTrack,
    pose: Pose,
    blacklist: FxHashSet<GridCell>,
    blocked: FxHashSet<(i64, i64, i64)>,
    committed: Option<GridCell>,
    /// Pose (key) and turn sign of an active detour around a blocked move.
    detour: Option<((i64, i64, i64), f64)>,
    warm: Vec<GridCell>,
    rng: ChaCha8Rng,
    planner_calls: usize,
    explore_steps: usize,
    detected: bool,
}

/// What the decision stage produced for this step.
struct Decision {
    action: Action,
    mode: &'static str,
    goal: Option<Vec3>,
    plan_cost: Option<f64>,
    frontiers: usize,
    exploring: bool,
}

enum Explore {
    Act(Decision),
    Exhausted,
}

/// Grid covering the scene with a margin; cell centers sit on multiples of
/// the resolution.
pub fn episode_grid(scene: &Scene, resolution: f64) -> GridConfig {
    let [x0, y0] = scene.spec().extent_min;
    let [x1, y1] = scene.spec().extent_max;
    let half = resolution / 2.0;
    let idx = |v: f64| ((v + half) / resolution).floor() as i32;
    let top = scene
        .spec()
        .boxes
        .iter()
        .map(|b| b.max[2])
        .fold(2.0f64, f64::max);
    GridConfig {
        resolution,
        origin: Vec3::new(-half, -half, -half),
        min: VoxelCoord::new(idx(x0) - 2, idx(y0) - 2, -1),
        max: VoxelCoord::new(idx(x1) + 2, idx(y1) + 2, idx(top) + 1),
    }
}

impl<'a> EpisodeState<'a> {
    fn new(scene: &'a Scene, cfg: &'a EpisodeConfig, providers: &'a ProviderSet) -> Result<Self> {
        cfg.validate()?;
        let target = cfg.target.clone().unwrap_or_else(|| scene.target().to_owned());
        let spawn = scene
            .spec()
            .spawns
            .get(cfg.spawn)
            .ok_or_else(|| Error::InvalidInput(format!("scene has no spawn {}", cfg.spawn)))?;
        let grid = episode_grid(scene, cfg.resolution);
        let landmarks = providers.landmarks.landmarks(&target)?.restricted(cfg.landmark_levels);
        let range = providers.landmarks.detection_range(&target)?;
        Ok(Self {
            scene,
            cfg,
            providers,
            target,
            camera: CameraModel::new(cfg.camera)?,
            landmarks,
            range,
            semantic: SemanticMap::new(),
            belief: BeliefMap::default(),
            visibility: VisibilityMap::default(),
            nav: NavGrid::new(grid),
            occupancy: DenseOccupancy::new(grid),
            fov: FovCache::new(cfg.camera, cfg.aggregation, grid),
            grid,
            track: TargetTrack::default(),
            pose: spawn.pose(),
            blacklist: FxHashSet::default(),
            blocked: FxHashSet::default(),
            committed: None,
            detour: None,
            warm: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            planner_calls: 0,
            explore_steps: 0,
            detected: false,
        })
    }

    fn observe(&mut self) -> Result<()> {
        let obs = self.scene.render(&self.pose, &self.camera);
        let max_depth = self.cfg.semantic.max_depth;
        let points = self.camera.back_project_all(&obs.depth, &obs.pose, max_depth);
        let eye = camera_center(&self.pose, &self.cfg.camera);
        self.nav.integrate(&points, &eye, &self.cfg.navgrid);
        let mut fresh = Vec::new();
        for p in points.iter().flatten() {
            let u = self.grid.discretize(p);
            if self.occupancy.set(u) {
                fresh.push(u);
            }
        }
        self.fov.invalidate(&fresh);

        self.semantic.update(
            &obs,
            &self.camera,
            &self.grid,
            &self.cfg.semantic,
            self.providers.embedder.as_ref(),
            self.providers.segmenter.as_ref(),
        )?;
        let dirty = self.semantic.take_dirty();
        self.belief.refresh(&self.semantic, &dirty, &self.landmarks);
        if self.cfg.use_visibility {
            self.visibility.update(&obs, &self.camera, &self.grid, &self.range, max_depth);
        }

        let detection = self
            .providers
            .detector
            .detect(&obs, &self.target, &self.cfg.camera, &self.range)?;
        if let Some(det) = detection {
            if self.providers.verifier.verify(&obs, &self.target, &det)? {
                self.detected = true;
                for &i in &det.pixels {
                    if let Some(p) = points[i] {
                        let cell = self.nav.cell_of(&p);
                        self.track.add(p, cell);
                    }
                }
            }
        }
        Ok(())
    }

    fn body_distance(&self, x: f64, y: f64) -> f64 {
        self.track.nearest(x, y).0 - self.scene.config().agent_radius
    }

    fn blocked_key(pose: &Pose) -> (i64, i64, i64) {
        (
            (pose.position.x * 100.0).round() as i64,
            (pose.position.y * 100.0).round() as i64,
            (pose.yaw.to_degrees()).round() as i64,
        )
    }

    /// Records an obstacle the camera missed in the cell just ahead,
    /// unless that cell is the agent's own or part of the target.
    fn mark_collision(&mut self) {
        let sim = self.scene.config();
        let ahead = self.pose.position + self.pose.heading() * (sim.agent_radius + sim.forward_step / 2.0);
        let c = self.nav.cell_of(&ahead);
        if c != self.nav.cell_of(&self.pose.position) && !self.track.cells.contains(&c) {
            self.nav.set(c, CellState::Occupied);
        }
    }

    /// Shortest turn/forward sequence (up to six actions) predicted to end
    /// inside the success band without touching the target.
    fn final_approach(&self) -> Option<Action> {
        const DEPTH: usize = 6;
        const CLEARANCE: f64 = 0.02;
        let sim = self.scene.config();
        let step = sim.forward_step;
        let turn = sim.turn_deg.to_radians();
        let goal = |x: f64, y: f64| {
            let d = self.body_distance(x, y);
            (CLEARANCE..=self.cfg.success_radius).contains(&d)
        };
        let mut frontier = vec![(self.pose, None::<Action>, None::<Action>)];
        for depth in 0..DEPTH {
            let mut next = Vec::new();
            for (pose, first, last) in frontier {
                for a in [Action::MoveForward, Action::TurnLeft, Action::TurnRight] {
                    let mut p = pose;
                    match (a, last) {
                        (Action::TurnLeft, Some(Action::TurnRight)) | (Action::TurnRight, Some(Action::TurnLeft)) => continue,
                        (Action::MoveForward, _) => {
                            if depth == 0 && self.blocked.contains(&Self::blocked_key(&pose)) {
                                continue;
                            }
                            p.position += pose.heading() * step;
                            if self.body_distance(p.position.x, p.position.y) < CLEARANCE {
                                continue;
                            }
                            let c = self.nav.cell_of(&p.position);
                            if self.nav.get(c) == CellState::Occupied && !self.track.cells.contains(&c) {
                                continue;
                            }
                            if goal(p.position.x, p.position.y) {
                                return Some(first.unwrap_or(a));
                            }
                        }
                        (Action::TurnLeft, _) => p.yaw = wrap_angle(p.yaw + turn),
                        _ => p.yaw = wrap_angle(p.yaw - turn),
                    }
                    next.push((p, Some(first.unwrap_or(a)), Some(a)));
                }
            }
            frontier = next;
        }
        None
    }

    /// Passable cells near the target, nearest to it first, that the agent
    /// can reach.
    fn approach_cell(&self, trav: &Traversability, start: GridCell) -> Result<Option<GridCell>> {
        let (_, p) = self.track.nearest(self.pose.position.x, self.pose.position.y);
        let tc = self.nav.cell_of(&p);
        let mut cands = Vec::new();
        for dy in -3..=3 {
            for dx in -3..=3 {
                let c = tc.offset(dx, dy);
                if trav.passable(c) {
                    let d = (self.nav.cell_center(c) - Vec3::new(p.x, p.y, 0.0)).norm();
                    cands.push((d, c));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, c) in cands.into_iter().take(6) {
            if astar_distance(trav, start, c)?.is_finite() {
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    fn approach(&self, tol: f64) -> Result<Option<Decision>> {
        let (x, y) = (self.pose.position.x, self.pose.position.y);
        let d = self.body_distance(x, y);
        let (_, nearest) = self.track.nearest(x, y);
        let decision = |action| Decision {
            action,
            mode: "approach",
            goal: Some(nearest),
            plan_cost: None,
            frontiers: 0,
            exploring: false,
        };
        if d <= self.cfg.success_radius {
            return Ok(Some(decision(Action::Stop)));
        }
        if d <= self.cfg.approach_radius {
            if let Some(a) = self.final_approach() {
                return Ok(Some(decision(a)));
            }
        }
        let start = self.nav.cell_of(&self.pose.position);
        let trav = self.nav.traversability(self.cfg.navgrid.inflate, Some(start));
        let goal = match self.approach_cell(&trav, start)? {
            Some(g) => Some((g, trav)),
            None => {
                let loose = self.nav.traversability(0, Some(start));
                self.approach_cell(&loose, start)?.map(|g| (g, loose))
            }
        };
        let Some((goal, trav)) = goal else {
            return Ok(None);
        };
        match local_goto(&self.pose, goal, &trav, &self.nav, tol)? {
            Goto::Act(a) => Ok(Some(decision(a))),
            Goto::Unreachable => Ok(None),
            Goto::Arrived => {
                // Close to the target but no clean approach sequence: face
                // it and creep forward unless that move already failed.
                let a = heading_action(&self.pose, &nearest, tol);
                let a = if a == Action::MoveForward && self.blocked.contains(&Self::blocked_key(&self.pose)) {
                    Action::TurnLeft
                } else {
                    a
                };
                Ok(Some(decision(a)))
            }
        }
    }

    fn explore(&mut self, tol: f64) -> Result<Explore> {
        self.planner_calls += 1;
        let start = self.nav.cell_of(&self.pose.position);
        let frontiers: Vec<Frontier> = detect_frontiers(&self.nav, self.cfg.min_frontier_size)
            .into_iter()
            .filter(|f| !self.blacklist.contains(&f.cell))
            .collect();
        if frontiers.is_empty() {
            return Ok(Explore::Exhausted);
        }
        let keep: FxHashSet<GridCell> = frontiers.iter().map(|f| f.cell).collect();
        self.fov.retain_cells(&keep);
        let posterior = PosteriorView {
            belief: &self.belief,
            visibility: self.cfg.use_visibility.then_some(&self.visibility),
        };
        let scored = self.fov.evaluate(&frontiers, &posterior, &self.occupancy);

        // Snap each frontier onto the traversable map and keep reachable ones.
        let mut reachable = Vec::new();
        let mut trav = self.nav.traversability(self.cfg.navgrid.inflate, Some(start));
        for inflate in [self.cfg.navgrid.inflate, 0] {
            if inflate != self.cfg.navgrid.inflate {
                trav = self.nav.traversability(inflate, Some(start));
            }
            for (f, s) in frontiers.iter().zip(&scored) {
                let Some(goal) = trav.nearest_passable(f.cell, 2) else {
                    continue;
                };
                let d = astar_distance(&trav, start, goal)?;
                if d.is_finite() {
                    reachable.push((f.cell, goal, s.observation_belief, d));
                }
            }
            if !reachable.is_empty() || inflate == 0 {
                break;
            }
        }
        if reachable.is_empty() {
            return Ok(Explore::Exhausted);
        }
        let count = reachable.len();

        let (frontier_cell, goal, plan_cost) = match self.cfg.planner {
            PlannerMode::RandomFrontier => {
                let keep = self.committed.and_then(|c| reachable.iter().find(|r| r.0 == c));
                let pick = match keep {
                    Some(r) => *r,
                    None => *reachable.choose(&mut self.rng).expect("non-empty"),
                };
                self.committed = Some(pick.0);
                (pick.0, pick.1, None)
            }
            PlannerMode::Greedy => {
                let best = reachable
                    .iter()
                    .min_by(|a, b| b.2.total_cmp(&a.2).then(a.3.total_cmp(&b.3)))
                    .expect("non-empty");
                (best.0, best.1, None)
            }
            PlannerMode::Anneal => {
                let mut top = reachable.clone();
                top.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.3.total_cmp(&b.3)).then(a.0.cmp(&b.0)));
                top.truncate(self.cfg.max_frontiers);
                let goals: Vec<GridCell> = top.iter().map(|r| r.1).collect();
                let n = goals.len();
                let mut matrix = vec![vec![0.0; n + 1]; n + 1];
                for i in 0..n {
                    matrix[0][i + 1] = top[i].3;
                    matrix[i + 1][0] = top[i].3;
                    for j in i + 1..n {
                        let d = astar_distance(&trav, goals[i], goals[j])?;
                        matrix[i + 1][j + 1] = d;
                        matrix[j + 1][i + 1] = d;
                    }
                }
                let inst = PlanningInstance {
                    start: self.nav.cell_center(start),
                    frontiers: top
                        .iter()
                        .map(|r| PlannedFrontier {
                            pos: self.nav.cell_center(r.1),
                            p_obs: r.2,
                        })
                        .collect(),
                    matrix,
                };
                let mut warm: Vec<usize> = self
                    .warm
                    .iter()
                    .filter_map(|c| top.iter().position(|r| r.0 == *c))
                    .collect();
                for i in 0..n {
                    if !warm.contains(&i) {
                        warm.push(i);
                    }
                }
                let mut acfg = self.cfg.anneal;
                acfg.rng_seed = self.cfg.seed ^ (self.planner_calls as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let plan = anneal_plan(&inst, &acfg, Some(&warm))?;
                self.warm = plan.permutation.iter().map(|&i| top[i].0).collect();
                let first = top[plan.permutation[0]];
                (first.0, first.1, Some(plan.cost))
            }
        };

        let mut decision = Decision {
            action: Action::TurnLeft,
            mode: "explore",
            goal: Some(self.nav.cell_center(goal)),
            plan_cost,
            frontiers: count,
            exploring: true,
        };
        match local_goto(&self.pose, goal, &trav, &self.nav, tol)? {
            Goto::Act(a) => decision.action = a,
            Goto::Arrived | Goto::Unreachable => {
                // Reached (or cannot leave toward) this frontier: retire it and
                // look around; the next plan picks another.
                self.blacklist.insert(frontier_cell);
                self.committed = None;
                let best = scored
                    .iter()
                    .find(|s| s.cell == frontier_cell)
                    .map_or(self.pose.yaw, |s| s.best_direction);
                let err = wrap_angle(best - self.pose.yaw);
                decision.action = if err < 0.0 { Action::TurnRight } else { Action::TurnLeft };
            }
        }
        Ok(Explore::Act(decision))
    }

    /// Replaces a forward move already known to collide from this pose by
    /// a turn toward the goal side, then forces one forward move on the new
    /// heading so the heading tolerance cannot undo the detour.
    fn avoid_blocked(&mut self, mut d: Decision) -> Decision {
        if d.action == Action::Stop {
            self.detour = None;
            return d;
        }
        let key = Self::blocked_key(&self.pose);
        let blocked = self.blocked.contains(&key);
        let sign = match self.detour.take() {
            Some((k, sign)) if k == key => {
                if !blocked {
                    d.action = Action::MoveForward;
                    return d;
                }
                Some(sign)
            }
            _ => None,
        };
        if sign.is_none() && (d.action != Action::MoveForward || !blocked) {
            return d;
        }
        let sign = sign.unwrap_or_else(|| {
            let g = d.goal.unwrap_or(self.pose.position + self.pose.heading());
            let err = wrap_angle((g.y - self.pose.position.y).atan2(g.x - self.pose.position.x) - self.pose.yaw);
            if err < 0.0 {
                -1.0
            } else {
                1.0
            }
        });
        let mut turned = self.pose;
        turned.yaw = wrap_angle(turned.yaw + sign * self.scene.config().turn_deg.to_radians());
        self.detour = Some((Self::blocked_key(&turned), sign));
        d.action = if sign > 0.0 { Action::TurnLeft } else { Action::TurnRight };
        d
    }

    fn decide(&mut self, step: usize) -> Result<Option<Decision>> {
        let d = self.decide_raw(step)?;
        Ok(d.map(|d| self.avoid_blocked(d)))
    }

    fn decide_raw(&mut self, step: usize) -> Result<Option<Decision>> {
        let tol = self.cfg.heading_tolerance_deg.to_radians();
        if !self.track.is_empty() {
            if let Some(d) = self.approach(tol)? {
                return Ok(Some(d));
            }
        } else if self.cfg.spin && step < 12 {
            return Ok(Some(Decision {
                action: Action::TurnLeft,
                mode: "spin",
                goal: None,
                plan_cost: None,
                frontiers: 0,
                exploring: false,
            }));
        }
        match self.explore(tol)? {
            Explore::Act(d) => Ok(Some(d)),
            Explore::Exhausted => Ok(None),
        }
    }
}

/// Runs one episode; provider and configuration failures end it with
/// [`Termination::Error`].
pub fn run_episode(
    scene: &Scene,
    cfg: &EpisodeConfig,
    providers: &ProviderSet,
    trace: Option<&mut dyn Write>,
) -> EpisodeResult {
    run_episode_with_maps(scene, cfg, providers, trace).0
}

/// Like [`run_episode`], also returning the final maps when the episode
/// got far enough to build them.
pub fn run_episode_with_maps(
    scene: &Scene,
    cfg: &EpisodeConfig,
    providers: &ProviderSet,
    mut trace: Option<&mut dyn Write>,
) -> (EpisodeResult, Option<EpisodeMaps>) {
    let target = cfg.target.clone().unwrap_or_else(|| scene.target().to_owned());
    let mut result = EpisodeResult {
        scene: scene.spec().name.clone(),
        target: target.clone(),
        seed: cfg.seed,
        success: false,
        path_length: 0.0,
        optimal_length: 0.0,
        steps: 0,
        spl: 0.0,
        termination: Termination::Error,
        collisions: 0,
        explore_steps: 0,
        planner_calls: 0,
        detected: false,
        error: None,
    };
    let fail = |mut r: EpisodeResult, e: Error| {
        r.error = Some(e.to_string());
        r.termination = Termination::Error;
        r
    };
    let mut st = match EpisodeState::new(scene, cfg, providers) {
        Ok(s) => s,
        Err(e) => return (fail(result, e), None),
    };
    let sr = cfg.success_radius;
    result.optimal_length = match scene.oracle_shortest_path(st.pose.position.x, st.pose.position.y, sr) {
        Ok(d) => d,
        Err(e) => return (fail(result, e), None),
    };
    let step_len = scene.config().forward_step;
    let mut forward_moves = 0usize;

    let outcome: Result<Termination> = (|| {
        for step in 0..cfg.max_steps {
            st.observe()?;
            let Some(d) = st.decide(step)? else {
                return Ok(Termination::NoFrontiers);
            };
            if d.exploring {
                st.explore_steps += 1;
            }
            result.steps = step + 1;
            let out = scene.step(&st.pose, d.action);
            if out.collided {
                result.collisions += 1;
                st.blocked.insert(EpisodeState::blocked_key(&st.pose));
                st.mark_collision();
                debug!("collision at {:?}", st.pose.position);
            } else if d.action == Action::MoveForward {
                forward_moves += 1;
            }
            if let Some(w) = trace.as_deref_mut() {
                let rec = TraceRecord {
                    step,
                    x: st.pose.position.x,
                    y: st.pose.position.y,
                    yaw: st.pose.yaw,
                    mode: d.mode,
                    action: d.action,
                    collided: out.collided,
                    goal: d.goal.map(|g| [g.x, g.y]),
                    plan_cost: d.plan_cost,
                    frontiers: d.frontiers,
                };
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
            st.pose = out.pose;
            if d.action == Action::Stop {
                let (x, y) = (st.pose.position.x, st.pose.position.y);
                return Ok(if scene.is_success(x, y, sr) {
                    Termination::Success
                } else {
                    Termination::FalseStop
                });
            }
        }
        Ok(Termination::StepLimit)
    })();

    result.path_length = step_len * forward_moves as f64;
    result.explore_steps = st.explore_steps;
    result.planner_calls = st.planner_calls;
    result.detected = st.detected;
    match outcome {
        Ok(t) => {
            result.termination = t;
            result.success = t == Termination::Success;
            result.spl = spl(result.success, result.path_length, result.optimal_length);
        }
        Err(e) => result = fail(result, e),
    }
    let maps = EpisodeMaps {
        grid: st.grid,
        semantic: st.semantic,
        belief: st.belief,
        visibility: st.visibility,
        navgrid: st.nav,
    };
    (result, Some(maps))
}

/// One episode of a batch.
#[derive(Clone, Debug)]
pub struct EpisodeJob {
    pub scene: Arc<Scene>,
    pub cfg: EpisodeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_spl: f64,
    pub errors: usize,
    pub results: Vec<EpisodeResult>,
}

impl BatchSummary {
    pub fn from_results(results: Vec<EpisodeResult>) -> Self {
        let n = results.len();
        let successes = results.iter().filter(|r| r.success).count();
        let errors = results.iter().filter(|r| r.termination == Termination::Error).count();
        let (success_rate, mean_spl) = if n == 0 {
            (0.0, 0.0)
        } else {
            (
                successes as f64 / n as f64,
                results.iter().map(|r| r.spl).sum::<f64>() / n as f64,
            )
        };
        Self {
            episodes: n,
            successes,
            success_rate,
            mean_spl,
            errors,
            results,
        }
    }
}

/// Runs episodes concurrently; results keep job order.
pub fn run_batch(jobs: &[EpisodeJob], providers: &ProviderSet) -> Result<BatchSummary> {
    if jobs.is_empty() {
        return Err(Error::InvalidInput("a batch needs at least one episode".into()));
    }
    let results = jobs
        .par_iter()
        .map(|j| run_episode(&j.scene, &j.cfg, providers, None))
        .collect();
    Ok(BatchSummary::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(success: bool, spl: f64) -> EpisodeResult {
        EpisodeResult {
            scene: "s".into(),
            target: "t".into(),
            seed: 0,
            success,
            path_length: 1.0,
            optimal_length: 1.0,
            steps: 1,
            spl,
            termination: if success { Termination::Success } else { Termination::StepLimit },
            collisions: 0,
            explore_steps: 0,
            planner_calls: 0,
            detected: success,
            error: None,
        }
    }

    #[test]
    fn spl_rule() {
        assert_eq!(spl(true, 10.0, 5.0), 0.5);
        assert_eq!(spl(true, 4.0, 5.0), 1.0);
        assert_eq!(spl(false, 5.0, 5.0), 0.0);
        assert_eq!(spl(true, 0.0, 0.0), 1.0);
    }

    #[test]
    fn batch_aggregates() {
        let all = BatchSummary::from_results(vec![result(true, 1.0), result(true, 1.0)]);
        assert_eq!((all.success_rate, all.mean_spl), (1.0, 1.0));
        let half = BatchSummary::from_results(vec![result(true, 0.5), result(false, 0.0)]);
        assert_eq!((half.success_rate, half.mean_spl), (0.5, 0.25));
        let none = BatchSummary::from_results(vec![result(false, 0.0)]);
        assert_eq!(none.mean_spl, 0.0);
    }

    #[test]
    fn goto_turns_the_short_way() {
        let nav = NavGrid::from_ascii(&["....."; 5], 0.25);
        let c = GridCell::new(2, 2);
        let center = nav.cell_center(c);
        let goal = GridCell::new(4, 2);
        let tol = 15f64.to_radians();
        let ahead = Pose::from_xy_yaw(center.x, center.y, 0.0);
        assert_eq!(local_goto(&ahead, goal, &nav, &nav, tol).unwrap(), Goto::Act(Action::MoveForward));
        let behind = Pose::from_xy_yaw(center.x, center.y, std::f64::consts::PI - 0.1);
        assert_eq!(local_goto(&behind, goal, &nav, &nav, tol).unwrap(), Goto::Act(Action::TurnRight));
        let left = Pose::from_xy_yaw(center.x, center.y, -std::f64::consts::FRAC_PI_2);
        assert_eq!(local_goto(&left, goal, &nav, &nav, tol).unwrap(), Goto::Act(Action::TurnLeft));
        let there = Pose::from_xy_yaw(nav.cell_center(goal).x, nav.cell_center(goal).y, 0.0);
        assert_eq!(local_goto(&there, goal, &nav, &nav, tol).unwrap(), Goto::Arrived);
    }

    #[test]
    fn goto_signals_unreachable() {
        let nav = NavGrid::from_ascii(&["..#..", "..#..", "..#.."], 0.25);
        let start = nav.cell_center(GridCell::new(0, 1));
        let pose = Pose::from_xy_yaw(start.x, start.y, 0.0);
        let tol = 15f64.to_radians();
        assert_eq!(local_goto(&pose, GridCell::new(4, 1), &nav, &nav, tol).unwrap(), Goto::Unreachable);
    }
}
