//! Map snapshots for offline inspection.
//!
//! # Semantic map binary layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header:  magic  b"BNSM"      4 bytes
//!          version u32         currently 1
//!          dim     u32         feature dimension D
//!          count   u64         number of records
//! record:  x, y, z i32 × 3     voxel index
//!          level   u8          0 scene, 1 region, 2 object
//!          score   f64
//!          feature f32 × D
//! ```
//!
//! Records are sorted by voxel, then level. A voxel contributes one record
//! per filled level. The JSON sidecar holds the [`GridConfig`] that maps
//! indices to world positions.
//!
//! # Scalar fields
//!
//! Belief, visibility and posterior grids are written as ASCII PLY point
//! clouds with `x y z` at voxel centers and a `value` scalar property.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::geometry::{GridConfig, VoxelCoord};
use crate::semantic::{SemanticLevel, SemanticMap};
use crate::voxel::VoxelGrid;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"BNSM";
pub const SNAPSHOT_VERSION: u32 = 1;

/// One flattened semantic map entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRecord {
    pub voxel: VoxelCoord,
    pub level: SemanticLevel,
    pub score: f64,
    pub feature: Vec<f32>,
}

/// Contents of the JSON file written next to a binary snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub version: u32,
    pub feature_dim: u32,
    pub records: u64,
    pub grid: GridConfig,
}

/// Flattens a semantic map into sorted records. All stored features must
/// share one dimension.
pub fn snapshot_records(map: &SemanticMap) -> Result<(u32, Vec<SnapshotRecord>)> {
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    for (u, cell) in map.grid.sorted() {
        for level in SemanticLevel::ALL {
            let Some(slot) = cell.slot(level) else { continue };
            let d = slot.feature.dim();
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(invalid_input(format!("mixed feature dimensions {prev} and {d}")))
                }
                _ => {}
            }
            out.push(SnapshotRecord {
                voxel: u,
                level,
                score: slot.score,
                feature: slot.feature.as_slice().iter().map(|&v| v as f32).collect(),
            });
        }
    }
    Ok((dim.unwrap_or(0) as u32, out))
}

pub fn write_semantic_snapshot<W: Write>(map: &SemanticMap, mut w: W) -> Result<SnapshotCounts> {
    let (dim, records) = snapshot_records(map)?;
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in &records {
        for c in [r.voxel.x, r.voxel.y, r.voxel.z] {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&[r.level.index() as u8])?;
        w.write_all(&r.score.to_le_bytes())?;
        for f in &r.feature {
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(SnapshotCounts { feature_dim: dim, records: records.len() as u64 })
}

/// Dimension and record count of a written snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnapshotCounts {
    pub feature_dim: u32,
    pub records: u64,
}

/// Reads a snapshot written by [`write_semantic_snapshot`].
pub fn read_semantic_snapshot<R: Read>(mut r: R) -> Result<(u32, Vec<SnapshotRecord>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(invalid_input("not a semantic map snapshot"));
    }
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(invalid_input(format!("unsupported snapshot version {version}")));
    }
    let dim = read_u32(&mut r)?;
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let x = read_i32(&mut r)?;
        let y = read_i32(&mut r)?;
        let z = read_i32(&mut r)?;
        let mut lvl = [0u8; 1];
        r.read_exact(&mut lvl)?;
        let level = *SemanticLevel::ALL
            .get(lvl[0] as usize)
            .ok_or_else(|| invalid_input(format!("bad level byte {}", lvl[0])))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let score = f64::from_le_bytes(b8);
        let mut feature = Vec::with_capacity(dim as usize);
        for _ in 0..dim {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)?;
            feature.push(f32::from_le_bytes(b4));
        }
        out.push(SnapshotRecord { voxel: VoxelCoord::new(x, y, z), level, score, feature });
    }
    Ok((dim, out))
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save_semantic_snapshot(map: &SemanticMap, grid: &GridConfig, dir: &Path, stem: &str) -> Result<()> {
    let bin = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
    let mut w = std::io::BufWriter::new(bin);
    let counts = write_semantic_snapshot(map, &mut w)?;
    w.flush()?;
    let sidecar = SnapshotSidecar {
        version: SNAPSHOT_VERSION,
        feature_dim: counts.feature_dim,
        records: counts.records,
        grid: *grid,
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Writes a scalar voxel field as an ASCII PLY point cloud, voxels in
/// ascending order.
pub fn write_ply<W: Write>(values: &VoxelGrid<f64>, grid: &GridConfig, mut w: W) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", values.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "property double value")?;
    writeln!(w, "end_header")?;
    for (u, v) in values.sorted() {
        let c = grid.voxel_center(u);
        writeln!(w, "{} {} {} {}", c.x, c.y, c.z, v)?;
    }
    Ok(())
}

pub fn save_ply(values: &VoxelGrid<f64>, grid: &GridConfig, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_ply(values, grid, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
