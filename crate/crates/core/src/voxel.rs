//! Sparse voxel storage shared by every map.

use rustc_hash::FxHashMap;

use crate::geometry::{GridConfig, VoxelCoord};

/// Sparse map from voxel coordinates to per-voxel payloads.
///
/// Iteration order is deterministic for a given insertion history but
/// otherwise unspecified; use [`VoxelGrid::sorted_keys`] when order matters.
#[derive(Clone, Debug)]
pub struct VoxelGrid<T> {
    cells: FxHashMap<VoxelCoord, T>,
}

impl<T> Default for VoxelGrid<T> {
    fn default() -> Self {
        Self {
            cells: FxHashMap::default(),
        }
    }
}

impl<T> VoxelGrid<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, u: &VoxelCoord) -> Option<&T> {
        self.cells.get(u)
    }

    pub fn get_mut(&mut self, u: &VoxelCoord) -> Option<&mut T> {
        self.cells.get_mut(u)
    }

    pub fn contains(&self, u: &VoxelCoord) -> bool {
        self.cells.contains_key(u)
    }

    pub fn insert(&mut self, u: VoxelCoord, value: T) -> Option<T> {
        self.cells.insert(u, value)
    }

    pub fn remove(&mut self, u: &VoxelCoord) -> Option<T> {
        self.cells.remove(u)
    }

    pub fn entry_or_insert_with(&mut self, u: VoxelCoord, f: impl FnOnce() -> T) -> &mut T {
        self.cells.entry(u).or_insert_with(f)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelCoord, &T)> {
        self.cells.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelCoord> {
        self.cells.keys()
    }

    pub fn sorted_keys(&self) -> Vec<VoxelCoord> {
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Entries in ascending coordinate order.
    pub fn sorted(&self) -> Vec<(VoxelCoord, &T)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, v)| (*k, v)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }
}

impl<T: PartialEq> PartialEq for VoxelGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cells == other.cells
    }
}

impl<T> std::ops::Index<&VoxelCoord> for VoxelGrid<T> {
    type Output = T;

    fn index(&self, u: &VoxelCoord) -> &T {
        &self.cells[u]
    }
}

impl<T> FromIterator<(VoxelCoord, T)> for VoxelGrid<T> {
    fn from_iter<I: IntoIterator<Item = (VoxelCoord, T)>>(iter: I) -> Self {
        Self {
            cells: iter.into_iter().collect(),
        }
    }
}

/// Read access to an occupancy map for ray casting.
pub trait Occupancy {
    fn is_occupied(&self, u: VoxelCoord) -> bool;
}

impl Occupancy for VoxelGrid<bool> {
    fn is_occupied(&self, u: VoxelCoord) -> bool {
        self.cells.get(&u).copied().unwrap_or(false)
    }
}

impl<F: Fn(VoxelCoord) -> bool> Occupancy for F {
    fn is_occupied(&self, u: VoxelCoord) -> bool {
        self(u)
    }
}

/// Bit-packed occupancy over the full grid bounds. Out-of-bounds voxels read
/// as free.
#[derive(Clone, Debug)]
pub struct DenseOccupancy {
    cfg: GridConfig,
    extent: [usize; 3],
    bits: Vec<u64>,
    count: usize,
}

impl DenseOccupancy {
    pub fn new(cfg: GridConfig) -> Self {
        let extent = cfg.extent();
        let n = extent[0] * extent[1] * extent[2];
        Self {
            cfg,
            extent,
            bits: vec![0; n.div_ceil(64)],
            count: 0,
        }
    }

    fn index(&self, u: VoxelCoord) -> Option<usize> {
        if !self.cfg.contains(u) {
            return None;
        }
        let x = (u.x - self.cfg.min.x) as usize;
        let y = (u.y - self.cfg.min.y) as usize;
        let z = (u.z - self.cfg.min.z) as usize;
        Some((z * self.extent[1] + y) * self.extent[0] + x)
    }

    /// Marks a voxel occupied; returns true if it was previously free.
    pub fn set(&mut self, u: VoxelCoord) -> bool {
        let Some(i) = self.index(u) else {
            return false;
        };
        let (w, b) = (i / 64, i % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        if fresh {
            self.count += 1;
        }
        fresh
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }
}

impl Occupancy for DenseOccupancy {
    fn is_occupied(&self, u: VoxelCoord) -> bool {
        match self.index(u) {
            Some(i) => self.bits[i / 64] & (1 << (i % 64)) != 0,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_occupancy_set_and_query() {
        let cfg = GridConfig::default();
        let mut occ = DenseOccupancy::new(cfg);
        let u = VoxelCoord::new(-3, 7, 2);
        assert!(!occ.is_occupied(u));
        assert!(occ.set(u));
        assert!(!occ.set(u));
        assert!(occ.is_occupied(u));
        assert_eq!(occ.count(), 1);
        assert!(!occ.set(VoxelCoord::new(10_000, 0, 0)));
        assert!(!occ.is_occupied(VoxelCoord::new(10_000, 0, 0)));
    }

    #[test]
    fn sorted_keys_are_ordered() {
        let g: VoxelGrid<u8> = [(VoxelCoord::new(2, 0, 0), 1), (VoxelCoord::new(-1, 5, 0), 2)]
            .into_iter()
            .collect();
        assert_eq!(
            g.sorted_keys(),
            vec![VoxelCoord::new(-1, 5, 0), VoxelCoord::new(2, 0, 0)]
        );
    }
}
