//! Seeded multi-room scene generator.
//!
//! Rooms are square cells on a small grid, separated by walls with doors
//! along a random spanning tree (plus a few extra doors). Each room gets a
//! type and the furniture of that type; region labels are laid down as thin
//! rugs around their anchor objects. The target sits in the room type that
//! usually holds it and the agent spawns in a different room.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scene, SceneBox, SceneSpec, SimConfig, SpawnPose};
use crate::error::{invalid_config, invalid_input, Result};
use crate::providers::concepts::{HOUSEHOLD, REGIONS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Candidate room grid shapes `[columns, rows]`.
    pub layouts: Vec<[usize; 2]>,
    pub room_size: f64,
    pub wall_height: f64,
    pub door_width: f64,
    /// Chance of a door on a wall outside the spanning tree.
    pub extra_door_prob: f64,
    /// Minimum free gap between furniture pieces, and between furniture and
    /// walls it does not touch.
    pub furniture_gap: f64,
    /// Minimum distance from a spawn point to any obstacle.
    pub spawn_clearance: f64,
    /// Targets to draw from; each must be a household object.
    pub targets: Vec<String>,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            layouts: vec![[2, 2], [3, 2]],
            room_size: 6.0,
            wall_height: 2.5,
            door_width: 1.25,
            extra_door_prob: 0.35,
            furniture_gap: 0.9,
            spawn_clearance: 0.35,
            targets: ["couch", "bed", "toilet", "tv", "plant", "chair"]
                .map(String::from)
                .to_vec(),
            max_attempts: 64,
        }
    }
}

/// Footprint and height per furniture label, meters.
const SIZES: &[(&str, [f64; 3])] = &[
    ("couch", [2.0, 0.9, 0.8]),
    ("tv", [1.2, 0.3, 1.1]),
    ("coffee table", [1.0, 0.6, 0.45]),
    ("plant", [0.5, 0.5, 1.0]),
    ("bed", [2.0, 1.6, 0.6]),
    ("nightstand", [0.5, 0.5, 0.6]),
    ("wardrobe", [1.2, 0.6, 2.0]),
    ("fridge", [0.8, 0.7, 1.8]),
    ("stove", [0.8, 0.7, 0.9]),
    ("counter", [1.6, 0.6, 0.9]),
    ("toilet", [0.5, 0.7, 0.75]),
    ("sink", [0.6, 0.5, 0.9]),
    ("bathtub", [1.7, 0.8, 0.6]),
    ("dining table", [1.6, 0.9, 0.75]),
    ("chair", [0.5, 0.5, 0.9]),
    ("cabinet", [1.2, 0.5, 1.0]),
    ("desk", [1.4, 0.7, 0.75]),
    ("bookshelf", [1.0, 0.4, 1.9]),
];

const WALL_HALF: f64 = 0.125;
const RUG_MARGIN: f64 = 0.5;
const RUG_HEIGHT: f64 = 0.01;
const DOOR_DEPTH: f64 = 1.0;
const PLACEMENT_TRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn gap(&self, o: &Rect) -> f64 {
        let dx = (o.x0 - self.x1).max(self.x0 - o.x1).max(0.0);
        let dy = (o.y0 - self.y1).max(self.y0 - o.y1).max(0.0);
        dx.hypot(dy)
    }

    fn intersects(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn inside(&self, o: &Rect) -> bool {
        self.x0 >= o.x0 && self.x1 <= o.x1 && self.y0 >= o.y0 && self.y1 <= o.y1
    }

    fn grow(&self, m: f64, clip: &Rect) -> Rect {
        Rect {
            x0: (self.x0 - m).max(clip.x0),
            y0: (self.y0 - m).max(clip.y0),
            x1: (self.x1 + m).min(clip.x1),
            y1: (self.y1 + m).min(clip.y1),
        }
    }

    fn to_box(&self, label: &str, z0: f64, z1: f64) -> SceneBox {
        SceneBox::new(label, [self.x0, self.y0, z0], [self.x1, self.y1, z1])
    }
}

fn room_of(object: &str) -> Option<&'static str> {
    HOUSEHOLD
        .iter()
        .find(|(_, objs)| objs.iter().any(|(o, _)| *o == object))
        .map(|(room, _)| *room)
}

fn size_of(object: &str) -> [f64; 3] {
    SIZES
        .iter()
        .find(|(l, _)| *l == object)
        .map(|(_, s)| *s)
        .unwrap_or([0.6, 0.6, 0.8])
}

/// A door in the wall between rooms `a` and `b`: `along` is the start of
/// the gap on the shared wall's axis.
#[derive(Clone, Copy, Debug)]
struct Door {
    a: usize,
    b: usize,
    along: f64,
}

struct Layout {
    cols: usize,
    rows: usize,
    size: f64,
}

impl Layout {
    fn cell(&self, room: usize) -> Rect {
        let (i, j) = ((room % self.cols) as f64, (room / self.cols) as f64);
        Rect {
            x0: i * self.size,
            y0: j * self.size,
            x1: (i + 1.0) * self.size,
            y1: (j + 1.0) * self.size,
        }
    }

    fn interior(&self, room: usize) -> Rect {
        let c = self.cell(room);
        Rect {
            x0: c.x0 + WALL_HALF,
            y0: c.y0 + WALL_HALF,
            x1: c.x1 - WALL_HALF,
            y1: c.y1 - WALL_HALF,
        }
    }

    /// Adjacent room pairs `(a, b)` with `b` to the right of or above `a`.
    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.rows {
            for i in 0..self.cols {
                let r = j * self.cols + i;
                if i + 1 < self.cols {
                    out.push((r, r + 1));
                }
                if j + 1 < self.rows {
                    out.push((r, r + self.cols));
                }
            }
        }
        out
    }

    fn horizontal(&self, d: &Door) -> bool {
        d.b == d.a + 1 && d.a / self.cols == d.b / self.cols
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Generates a validated scene from a seed.
pub fn generate_scene(seed: u64, cfg: &GeneratorConfig, sim: &SimConfig) -> Result<SceneSpec> {
    if cfg.layouts.is_empty() || cfg.targets.is_empty() {
        return Err(invalid_config("generator needs at least one layout and one target"));
    }
    if cfg.layouts.iter().any(|&[c, r]| c * r < 2 || c * r > HOUSEHOLD.len()) {
        return Err(invalid_config(format!(
            "layouts must have between 2 and {} rooms",
            HOUSEHOLD.len()
        )));
    }
    if !(cfg.room_size >= 2.0 * cfg.door_width + 1.0) {
        return Err(invalid_config("rooms too small for their doors"));
    }
    for t in &cfg.targets {
        if room_of(t).is_none() {
            return Err(invalid_config(format!("`{t}` is not a household object")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_attempts {
        if let Some(spec) = attempt(&mut rng, seed, cfg) {
            if Scene::new(spec.clone(), *sim).is_ok() {
                return Ok(spec);
            }
        }
    }
    Err(invalid_input(format!("no valid scene for seed {seed} after {} attempts", cfg.max_attempts)))
}

fn attempt(rng: &mut ChaCha8Rng, seed: u64, cfg: &GeneratorConfig) -> Option<SceneSpec> {
    let [cols, rows] = *cfg.layouts.choose(rng)?;
    let layout = Layout {
        cols,
        rows,
        size: cfg.room_size,
    };
    let n = cols * rows;
    let target = cfg.targets.choose(rng)?.clone();
    let target_room = room_of(&target)?;

    let mut others: Vec<&str> = HOUSEHOLD
        .iter()
        .map(|(r, _)| *r)
        .filter(|r| *r != target_room)
        .collect();
    others.shuffle(rng);
    let mut types: Vec<&str> = std::iter::once(target_room).chain(others.into_iter().take(n - 1)).collect();
    types.shuffle(rng);

    let mut edges = layout.edges();
    edges.shuffle(rng);
    let mut parent: Vec<usize> = (0..n).collect();
    let mut doors = Vec::new();
    let max_k = ((cfg.room_size - 2.0 * (WALL_HALF + 0.5) - cfg.door_width) / 0.25).floor() as i64;
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let tree = ra != rb;
        if tree {
            parent[ra] = rb;
        }
        if tree || rng.gen_bool(cfg.extra_door_prob) {
            // Gap edges fall on multiples of 0.25 m offset by half a cell.
            let k = rng.gen_range(2..=max_k.max(2));
            doors.push(Door {
                a,
                b,
                along: WALL_HALF + 0.25 * k as f64,
            });
        }
    }

    let mut boxes = Vec::new();
    let h = cfg.wall_height;
    for room in 0..n {
        let c = layout.cell(room);
        let label = types[room];
        boxes.push(c.to_box(label, -0.05, 0.0));
        // Door gaps on each side: (side, start, end) in absolute coordinates.
        let mut gaps: [Vec<(f64, f64)>; 4] = Default::default();
        for d in doors.iter().filter(|d| d.a == room || d.b == room) {
            let horiz = layout.horizontal(d);
            let side = match (horiz, d.a == room) {
                (true, true) => 1,   // east wall
                (true, false) => 3,  // west wall
                (false, true) => 2,  // north wall
                (false, false) => 0, // south wall
            };
            let base = if horiz { c.y0 } else { c.x0 };
            gaps[side].push((base + d.along, base + d.along + cfg.door_width));
        }
        for (side, g) in gaps.iter().enumerate() {
            let (lo, hi) = if side % 2 == 0 { (c.x0, c.x1) } else { (c.y0, c.y1) };
            let mut cuts = g.clone();
            cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut start = lo;
            let mut segs = Vec::new();
            for (g0, g1) in cuts {
                segs.push((start, g0));
                start = g1;
            }
            segs.push((start, hi));
            for (s0, s1) in segs.into_iter().filter(|(a, b)| b - a > 1e-9) {
                let r = match side {
                    0 => Rect { x0: s0, y0: c.y0, x1: s1, y1: c.y0 + WALL_HALF },
                    2 => Rect { x0: s0, y0: c.y1 - WALL_HALF, x1: s1, y1: c.y1 },
                    1 => Rect { x0: c.x1 - WALL_HALF, y0: s0, x1: c.x1, y1: s1 },
                    _ => Rect { x0: c.x0, y0: s0, x1: c.x0 + WALL_HALF, y1: s1 },
                };
                boxes.push(r.to_box(label, 0.0, h));
            }
        }
    }

    let mut furniture_all = Vec::new();
    for room in 0..n {
        let inner = layout.interior(room);
        let c = layout.cell(room);
        let door_zones: Vec<Rect> = doors
            .iter()
            .filter(|d| d.a == room || d.b == room)
            .map(|d| {
                let horiz = layout.horizontal(d);
                if horiz {
                    let (y0, y1) = (c.y0 + d.along, c.y0 + d.along + cfg.door_width);
                    if d.a == room {
                        Rect { x0: c.x1 - DOOR_DEPTH, y0, x1: c.x1, y1 }
                    } else {
                        Rect { x0: c.x0, y0, x1: c.x0 + DOOR_DEPTH, y1 }
                    }
                } else {
                    let (x0, x1) = (c.x0 + d.along, c.x0 + d.along + cfg.door_width);
                    if d.a == room {
                        Rect { x0, y0: c.y1 - DOOR_DEPTH, x1, y1: c.y1 }
                    } else {
                        Rect { x0, y0: c.y0, x1, y1: c.y0 + DOOR_DEPTH }
                    }
                }
            })
            .collect();
        let (_, objects) = HOUSEHOLD.iter().find(|(r, _)| *r == types[room])?;
        let mut order: Vec<&str> = objects.iter().map(|(o, _)| *o).collect();
        if let Some(p) = order.iter().position(|o| *o == target) {
            order.swap(0, p);
        }
        let mut placed: Vec<(&str, Rect)> = Vec::new();
        for obj in order {
            let fp = place(rng, obj, &inner, &door_zones, &placed, cfg.furniture_gap);
            match fp {
                Some(r) => placed.push((obj, r)),
                None if obj == target => return None,
                None => {}
            }
        }
        for (label, anchor) in REGIONS
            .iter()
            .filter(|(_, r, _)| *r == types[room])
            .map(|(l, _, a)| (l, a))
        {
            if let Some((_, r)) = placed.iter().find(|(o, _)| o == anchor) {
                boxes.push(r.grow(RUG_MARGIN, &inner).to_box(label, 0.0, RUG_HEIGHT));
            }
        }
        furniture_all.extend(placed);
    }
    for (obj, r) in &furniture_all {
        boxes.push(r.to_box(obj, 0.0, size_of(obj)[2]));
    }

    let target_rooms: Vec<usize> = (0..n).filter(|&r| types[r] == target_room).collect();
    let spawn_rooms: Vec<usize> = (0..n).filter(|r| !target_rooms.contains(r)).collect();
    let room = *spawn_rooms.choose(rng)?;
    let inner = layout.interior(room);
    let obstacles: Vec<Rect> = furniture_all.iter().map(|(_, r)| *r).collect();
    let mut spawn = None;
    for _ in 0..PLACEMENT_TRIES {
        let x = rng.gen_range(inner.x0 + cfg.spawn_clearance..inner.x1 - cfg.spawn_clearance);
        let y = rng.gen_range(inner.y0 + cfg.spawn_clearance..inner.y1 - cfg.spawn_clearance);
        let p = Rect { x0: x, y0: y, x1: x, y1: y };
        if obstacles.iter().all(|o| o.gap(&p) >= cfg.spawn_clearance) {
            let yaw = (rng.gen_range(0..12) as f64 * 30.0 - 180.0).to_radians();
            spawn = Some(SpawnPose { x, y, yaw });
            break;
        }
    }
    let extent = layout.cell(n - 1);
    Some(SceneSpec {
        name: format!("gen-{seed}"),
        extent_min: [0.0, 0.0],
        extent_max: [extent.x1, extent.y1],
        target,
        boxes,
        spawns: vec![spawn?],
    })
}

/// Places one piece of furniture either flush against a wall or free
/// standing, respecting gaps to walls, other furniture and door zones.
fn place(
    rng: &mut ChaCha8Rng,
    obj: &str,
    inner: &Rect,
    doors: &[Rect],
    placed: &[(&str, Rect)],
    gap: f64,
) -> Option<Rect> {
    let [w0, d0, _] = size_of(obj);
    for _ in 0..PLACEMENT_TRIES {
        let (w, d) = if rng.gen_bool(0.5) { (w0, d0) } else { (d0, w0) };
        if w > inner.x1 - inner.x0 || d > inner.y1 - inner.y0 {
            continue;
        }
        let mut x = rng.gen_range(inner.x0..=inner.x1 - w);
        let mut y = rng.gen_range(inner.y0..=inner.y1 - d);
        if rng.gen_bool(0.7) {
            match rng.gen_range(0..4) {
                0 => y = inner.y0,
                1 => x = inner.x1 - w,
                2 => y = inner.y1 - d,
                _ => x = inner.x0,
            }
        }
        let r = Rect { x0: x, y0: y, x1: x + w, y1: y + d };
        if !r.inside(inner) || doors.iter().any(|z| z.intersects(&r)) {
            continue;
        }
        let wall_gaps = [r.x0 - inner.x0, inner.x1 - r.x1, r.y0 - inner.y0, inner.y1 - r.y1];
        if wall_gaps.iter().any(|&g| g > 1e-9 && g < gap) {
            continue;
        }
        if placed.iter().all(|(_, o)| o.gap(&r) >= gap) {
            return Some(r);
        }
    }
    None
}
