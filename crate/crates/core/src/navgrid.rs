//! 2D traversability grid derived from observed geometry.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Result};
use crate::geometry::{GridConfig, Vec3};

/// Column of voxels in the navigation plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub x: i32,
    pub y: i32,
}

impl GridCell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavGridConfig {
    /// Points at or below this height count as floor.
    pub floor_eps: f64,
    /// Points above this height do not obstruct the agent.
    pub agent_height: f64,
    /// Chebyshev radius, in cells, kept clear of obstacles when planning.
    pub inflate: u32,
}

impl Default for NavGridConfig {
    fn default() -> Self {
        Self {
            floor_eps: 0.1,
            agent_height: 1.5,
            inflate: 1,
        }
    }
}

impl NavGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_eps.is_finite() && self.agent_height > self.floor_eps) {
            return Err(invalid_config("nav grid needs agent_height > floor_eps"));
        }
        Ok(())
    }
}

/// Anything A* can search over.
pub trait Passable {
    fn passable(&self, c: GridCell) -> bool;
    fn resolution(&self) -> f64;
}

/// Dense 2D grid over the xy extent of a [`GridConfig`]. Cells outside the
/// extent read as Occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct NavGrid {
    grid: GridConfig,
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

impl NavGrid {
    pub fn new(grid: GridConfig) -> Self {
        let [w, h, _] = grid.extent();
        Self {
            grid,
            width: w,
            height: h,
            cells: vec![CellState::Unknown; w * h],
        }
    }

    /// Builds a grid from rows of characters: `.` Free, `#` Occupied,
    /// anything else Unknown. Row 0 is the top (largest y); the bottom-left
    /// character is cell (0, 0).
    pub fn from_ascii(rows: &[&str], resolution: f64) -> Self {
        let h = rows.len() as i32;
        let w = rows.iter().map(|r| r.len()).max().unwrap_or(0) as i32;
        let grid = GridConfig {
            resolution,
            origin: Vec3::zeros(),
            min: crate::geometry::VoxelCoord::new(0, 0, 0),
            max: crate::geometry::VoxelCoord::new(w - 1, h - 1, 0),
        };
        let mut g = Self::new(grid);
        for (r, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let state = match ch {
                    '.' => CellState::Free,
                    '#' => CellState::Occupied,
                    _ => CellState::Unknown,
                };
                g.set(GridCell::new(x as i32, h - 1 - r as i32), state);
            }
        }
        g
    }

    pub fn config(&self) -> &GridConfig {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, c: GridCell) -> Option<usize> {
        let x = c.x - self.grid.min.x;
        let y = c.y - self.grid.min.y;
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some(y as usize * self.width + x as usize)
    }

    pub fn cell_at(&self, index: usize) -> GridCell {
        GridCell::new(
            (index % self.width) as i32 + self.grid.min.x,
            (index / self.width) as i32 + self.grid.min.y,
        )
    }

    pub fn get(&self, c: GridCell) -> CellState {
        self.index(c).map_or(CellState::Occupied, |i| self.cells[i])
    }

    pub fn set(&mut self, c: GridCell, state: CellState) {
        if let Some(i) = self.index(c) {
            self.cells[i] = state;
        }
    }

    pub fn cell_of(&self, p: &Vec3) -> GridCell {
        let u = self.grid.discretize(p);
        GridCell::new(u.x, u.y)
    }

    /// World xy of the cell center, at z = 0.
    pub fn cell_center(&self, c: GridCell) -> Vec3 {
        let mut v = self.grid.voxel_center(crate::geometry::VoxelCoord::new(c.x, c.y, 0));
        v.z = 0.0;
        v
    }

    pub fn cells(&self) -> impl Iterator<Item = (GridCell, CellState)> + '_ {
        self.cells.iter().enumerate().map(|(i, s)| (self.cell_at(i), *s))
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|s| **s == state).count()
    }

    /// Folds one frame of back-projected points seen from `eye`: obstacle
    /// hits mark their cell Occupied, floor hits mark theirs Free, and the
    /// cells under each line of sight are carved Free up to the first
    /// Occupied cell.
    pub fn integrate(&mut self, points: &[Option<Vec3>], eye: &Vec3, cfg: &NavGridConfig) {
        for p in points.iter().flatten() {
            if p.z > cfg.floor_eps && p.z <= cfg.agent_height {
                self.set(self.cell_of(p), CellState::Occupied);
            }
        }
        let from = self.cell_of(eye);
        for p in points.iter().flatten() {
            if p.z > cfg.agent_height {
                continue;
            }
            let to = self.cell_of(p);
            let floor = p.z <= cfg.floor_eps;
            self.carve(from, to, floor);
        }
    }

    fn carve(&mut self, from: GridCell, to: GridCell, include_end: bool) {
        let (dx, dy) = ((to.x - from.x).abs(), -(to.y - from.y).abs());
        let (sx, sy) = ((to.x - from.x).signum(), (to.y - from.y).signum());
        let (mut x, mut y, mut err) = (from.x, from.y, dx + dy);
        loop {
            let c = GridCell::new(x, y);
            let end = c == to;
            if end && !include_end {
                break;
            }
            match self.index(c) {
                Some(i) if self.cells[i] == CellState::Occupied => break,
                Some(i) => self.cells[i] = CellState::Free,
                None => break,
            }
            if end {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Free cells clear of obstacles by `inflate` cells; `keep` stays
    /// passable regardless so the agent can always leave its own cell.
    pub fn traversability(&self, inflate: u32, keep: Option<GridCell>) -> Traversability {
        let r = inflate as i32;
        let mut pass = vec![false; self.cells.len()];
        for (i, s) in self.cells.iter().enumerate() {
            if *s != CellState::Free {
                continue;
            }
            let c = self.cell_at(i);
            let mut clear = true;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let n = self.index(c.offset(dx, dy));
                    if n.is_some_and(|j| self.cells[j] == CellState::Occupied) {
                        clear = false;
                        break 'scan;
                    }
                }
            }
            pass[i] = clear;
        }
        if let Some(i) = keep.and_then(|k| self.index(k)) {
            pass[i] = true;
        }
        Traversability {
            min: GridCell::new(self.grid.min.x, self.grid.min.y),
            width: self.width,
            height: self.height,
            resolution: self.grid.resolution,
            pass,
        }
    }
}

impl Passable for NavGrid {
    fn passable(&self, c: GridCell) -> bool {
        self.get(c) == CellState::Free
    }

    fn resolution(&self) -> f64 {
        self.grid.resolution
    }
}

/// Boolean passability snapshot used for planning.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversability {
    min: GridCell,
    width: usize,
    height: usize,
    resolution: f64,
    pass: Vec<bool>,
}

impl Traversability {
    fn index(&self, c: GridCell) -> Option<usize> {
        let x = c.x - self.min.x;
        let y = c.y - self.min.y;
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some(y as usize * self.width + x as usize)
    }

    /// Nearest passable cell within `radius` (Chebyshev rings, then
    /// Euclidean distance, then cell order).
    pub fn nearest_passable(&self, c: GridCell, radius: i32) -> Option<GridCell> {
        if self.passable(c) {
            return Some(c);
        }
        for ring in 1..=radius {
            let mut best: Option<(i32, GridCell)> = None;
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let n = c.offset(dx, dy);
                    if self.passable(n) {
                        let d = dx * dx + dy * dy;
                        if best.map_or(true, |(bd, bc)| (d, n) < (bd, bc)) {
                            best = Some((d, n));
                        }
                    }
                }
            }
            if let Some((_, n)) = best {
                return Some(n);
            }
        }
        None
    }
}

impl Passable for Traversability {
    fn passable(&self, c: GridCell) -> bool {
        self.index(c).is_some_and(|i| self.pass[i])
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_layout_orientation() {
        let g = NavGrid::from_ascii(&["#..", "..?"], 0.25);
        assert_eq!(g.get(GridCell::new(0, 1)), CellState::Occupied);
        assert_eq!(g.get(GridCell::new(2, 0)), CellState::Unknown);
        assert_eq!(g.get(GridCell::new(0, 0)), CellState::Free);
        assert_eq!(g.get(GridCell::new(5, 5)), CellState::Occupied);
    }

    #[test]
    fn integrate_marks_floor_obstacles_and_carves() {
        let grid = GridConfig {
            origin: Vec3::new(-0.125, -0.125, -0.125),
            ..GridConfig::default()
        };
        let mut g = NavGrid::new(grid);
        let eye = Vec3::new(0.0, 0.0, 0.88);
        let pts = vec![
            Some(Vec3::new(2.0, 0.0, 0.0)),
            Some(Vec3::new(0.0, 1.0, 0.5)),
            Some(Vec3::new(-1.0, 0.0, 2.0)),
            None,
        ];
        g.integrate(&pts, &eye, &NavGridConfig::default());
        for x in 0..=8 {
            assert_eq!(g.get(GridCell::new(x, 0)), CellState::Free, "x = {x}");
        }
        assert_eq!(g.get(GridCell::new(0, 4)), CellState::Occupied);
        assert_eq!(g.get(GridCell::new(0, 3)), CellState::Free);
        assert_eq!(g.get(GridCell::new(-4, 0)), CellState::Unknown);
        assert_eq!(g.get(GridCell::new(-1, 0)), CellState::Unknown);
    }

    #[test]
    fn carving_stops_at_obstacles() {
        let mut g = NavGrid::from_ascii(&["???#???"], 1.0);
        g.carve(GridCell::new(0, 0), GridCell::new(6, 0), true);
        assert_eq!(g.get(GridCell::new(2, 0)), CellState::Free);
        assert_eq!(g.get(GridCell::new(4, 0)), CellState::Unknown);
    }

    #[test]
    fn inflation_and_nearest() {
        let g = NavGrid::from_ascii(&[".....", ".....", "....#"], 0.25);
        let t = g.traversability(1, None);
        assert!(t.passable(GridCell::new(0, 0)));
        assert!(!t.passable(GridCell::new(3, 1)));
        assert!(!t.passable(GridCell::new(3, 0)));
        assert!(t.passable(GridCell::new(2, 1)));
        assert_eq!(t.nearest_passable(GridCell::new(3, 0), 2), Some(GridCell::new(2, 0)));
        let t = g.traversability(1, Some(GridCell::new(3, 1)));
        assert!(t.passable(GridCell::new(3, 1)));
    }
}
