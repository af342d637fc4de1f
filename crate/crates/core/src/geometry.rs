//! Poses, the pinhole camera, voxel discretization and voxel ray traversal.
//!
//! Frame conventions: the world is z-up; at yaw 0 the camera looks along +x
//! with +y to its left. Depth values are planar (distance along the optical
//! axis), as produced by RGB-D sensors.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::voxel::Occupancy;

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2*pi for tiny negative inputs.
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Agent pose. `position` is the base of the agent on the floor; the camera
/// sits `mount_height` above it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(invalid_input("pose position must be finite"));
        }
        Ok(Self {
            position,
            yaw: wrap_angle(yaw),
            pitch: wrap_angle(pitch),
            roll: wrap_angle(roll),
        })
    }

    pub fn from_xy_yaw(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: Vec3::new(x, y, 0.0),
            yaw: wrap_angle(yaw),
            pitch: 0.0,
            roll: 0.0,
        }
    }

    /// Camera-to-world rotation. Positive pitch tilts the optical axis up.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), -self.pitch)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll)
    }

    pub fn heading(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    /// Vertical field of view, radians.
    pub vfov: f64,
    /// Height of the optical center above the agent base, meters.
    pub mount_height: f64,
}

impl CameraIntrinsics {
    /// Square-pixel camera: the vertical FOV follows from the aspect ratio.
    pub fn with_hfov(width: usize, height: usize, hfov: f64, mount_height: f64) -> Self {
        let vfov = 2.0 * ((hfov / 2.0).tan() * height as f64 / width as f64).atan();
        Self {
            width,
            height,
            hfov,
            vfov,
            mount_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid_config("camera dimensions must be positive"));
        }
        let ok = |a: f64| a > 0.0 && a < PI;
        if !ok(self.hfov) || !ok(self.vfov) {
            return Err(invalid_config("camera fields of view must lie in (0, pi)"));
        }
        if !self.mount_height.is_finite() {
            return Err(invalid_config("mount height must be finite"));
        }
        Ok(())
    }

    fn half_tans(&self) -> (f64, f64) {
        ((self.hfov / 2.0).tan(), (self.vfov / 2.0).tan())
    }

    /// Camera-frame ray through an image point, scaled so its forward
    /// component is 1 (multiplying by planar depth gives the 3D point).
    pub fn ray(&self, p: ImagePoint) -> Vec3 {
        let (th, tv) = self.half_tans();
        let half_w = self.width as f64 / 2.0;
        let half_h = self.height as f64 / 2.0;
        Vec3::new(
            1.0,
            -(p.u - half_w) / half_w * th,
            -(p.v - half_h) / half_h * tv,
        )
    }

    /// Signed horizontal and vertical angles of an image point from the
    /// optical axis.
    pub fn angles(&self, p: ImagePoint) -> (f64, f64) {
        let r = self.ray(p);
        (r.y.atan(), r.z.atan())
    }
}

/// Continuous image coordinates: `u` runs left to right over `[0, width]`,
/// `v` top to bottom over `[0, height]`. Pixel `(col, row)` covers
/// `[col, col + 1) x [row, row + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn pixel_center(col: usize, row: usize) -> Self {
        Self {
            u: col as f64 + 0.5,
            v: row as f64 + 0.5,
        }
    }
}

/// World position of the optical center.
pub fn camera_center(pose: &Pose, intrinsics: &CameraIntrinsics) -> Vec3 {
    pose.position + Vec3::new(0.0, 0.0, intrinsics.mount_height)
}

/// Back-projects an image point with planar depth into the world frame.
pub fn back_project(
    pixel: ImagePoint,
    depth: f64,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec3> {
    if !depth.is_finite() || depth <= 0.0 {
        return Err(invalid_input(format!("depth must be finite and positive, got {depth}")));
    }
    let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
    if !(0.0..=w).contains(&pixel.u) || !(0.0..=h).contains(&pixel.v) {
        return Err(invalid_input(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel.u, pixel.v, intrinsics.width, intrinsics.height
        )));
    }
    let cam = intrinsics.ray(pixel) * depth;
    Ok(camera_center(pose, intrinsics) + pose.rotation() * cam)
}

/// Projects a world point into the image. Returns the image point and planar
/// depth, or `None` when the point is behind the camera.
pub fn project(
    point: &Vec3,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Option<(ImagePoint, f64)> {
    let cam = pose.rotation().inverse() * (point - camera_center(pose, intrinsics));
    if cam.x <= 0.0 {
        return None;
    }
    let (th, tv) = intrinsics.half_tans();
    let half_w = intrinsics.width as f64 / 2.0;
    let half_h = intrinsics.height as f64 / 2.0;
    let u = half_w - cam.y / cam.x * half_w / th;
    let v = half_h - cam.z / cam.x * half_h / tv;
    Some((ImagePoint::new(u, v), cam.x))
}

/// Per-pixel camera-frame rays for a fixed camera, computed once.
#[derive(Clone, Debug)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    rays: Vec<Vec3>,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let mut rays = Vec::with_capacity(intrinsics.width * intrinsics.height);
        for row in 0..intrinsics.height {
            for col in 0..intrinsics.width {
                rays.push(intrinsics.ray(ImagePoint::pixel_center(col, row)));
            }
        }
        Ok(Self { intrinsics, rays })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera-frame ray of pixel index `idx` (row-major), unit forward component.
    pub fn pixel_ray(&self, idx: usize) -> Vec3 {
        self.rays[idx]
    }

    /// Back-projects every pixel with valid depth; invalid pixels map to `None`.
    pub fn back_project_all(
        &self,
        depth: &[f64],
        pose: &Pose,
        max_depth: f64,
    ) -> Vec<Option<Vec3>> {
        let rot = pose.rotation();
        let center = camera_center(pose, &self.intrinsics);
        depth
            .iter()
            .zip(&self.rays)
            .map(|(&d, ray)| valid_depth(d, max_depth).then(|| center + rot * (ray * d)))
            .collect()
    }
}

/// A depth reading is usable iff it is finite, positive and within range.
pub fn valid_depth(d: f64, max_depth: f64) -> bool {
    d.is_finite() && d > 0.0 && d <= max_depth
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn is_face_adjacent(&self, other: &VoxelCoord) -> bool {
        (self.x - other.x).abs() + (self.y - other.y).abs() + (self.z - other.z).abs() == 1
    }
}

/// Discretization of world space into cubic voxels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Meters per voxel edge.
    pub resolution: f64,
    /// World position of the corner of voxel (0, 0, 0).
    pub origin: Vec3,
    /// Inclusive index bounds.
    pub min: VoxelCoord,
    pub max: VoxelCoord,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            origin: Vec3::zeros(),
            min: VoxelCoord::new(-256, -256, -8),
            max: VoxelCoord::new(255, 255, 23),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(invalid_config("voxel resolution must be positive"));
        }
        if self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z {
            return Err(invalid_config("grid bounds are empty"));
        }
        Ok(())
    }

    pub fn contains(&self, u: VoxelCoord) -> bool {
        (self.min.x..=self.max.x).contains(&u.x)
            && (self.min.y..=self.max.y).contains(&u.y)
            && (self.min.z..=self.max.z).contains(&u.z)
    }

    /// Unbounded floor discretization.
    pub fn discretize(&self, x: &Vec3) -> VoxelCoord {
        let r = (x - self.origin) / self.resolution;
        VoxelCoord::new(r.x.floor() as i32, r.y.floor() as i32, r.z.floor() as i32)
    }

    pub fn voxel_center(&self, u: VoxelCoord) -> Vec3 {
        self.origin
            + Vec3::new(u.x as f64 + 0.5, u.y as f64 + 0.5, u.z as f64 + 0.5) * self.resolution
    }

    pub fn voxel_min_corner(&self, u: VoxelCoord) -> Vec3 {
        self.origin + Vec3::new(u.x as f64, u.y as f64, u.z as f64) * self.resolution
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            (self.max.x - self.min.x + 1) as usize,
            (self.max.y - self.min.y + 1) as usize,
            (self.max.z - self.min.z + 1) as usize,
        ]
    }
}

/// `u = floor((x - origin) / resolution)`; points on a voxel face belong to
/// the higher-index voxel. Out-of-bounds results are reported as
/// [`Error::OutOfBounds`] carrying the computed index.
pub fn world_to_voxel(x: &Vec3, cfg: &GridConfig) -> Result<VoxelCoord> {
    if !x.iter().all(|c| c.is_finite()) {
        return Err(invalid_input("world point must be finite"));
    }
    let u = cfg.discretize(x);
    if cfg.contains(u) {
        Ok(u)
    } else {
        Err(Error::OutOfBounds(u))
    }
}

/// Casts a ray through the voxel grid and returns the traversed voxels in
/// order of increasing distance.
///
/// The walk stops after the first occupied voxel (which is included), when
/// the next voxel would be entered at or beyond `max_range`, or when it
/// leaves the grid bounds. Consecutive voxels share a face.
pub fn ray_cast(
    origin: &Vec3,
    direction: &Vec3,
    max_range: f64,
    cfg: &GridConfig,
    occupancy: &impl Occupancy,
) -> Result<Vec<VoxelCoord>> {
    let mut out = Vec::new();
    ray_walk(origin, direction, max_range, cfg, |u| {
        out.push(u);
        !occupancy.is_occupied(u)
    })?;
    Ok(out)
}

/// Amanatides–Woo traversal. `visit` is called for each voxel in order and
/// returns whether the walk should continue past it.
pub fn ray_walk(
    origin: &Vec3,
    direction: &Vec3,
    max_range: f64,
    cfg: &GridConfig,
    mut visit: impl FnMut(VoxelCoord) -> bool,
) -> Result<()> {
    let norm = direction.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid_input("ray direction must be non-zero"));
    }
    if !(max_range > 0.0) {
        return Err(invalid_input("ray max_range must be positive"));
    }
    if !origin.iter().all(|c| c.is_finite()) {
        return Err(invalid_input("ray origin must be finite"));
    }
    let dir = direction / norm;
    let res = cfg.resolution;
    let local = (origin - cfg.origin) / res;
    let mut cur = cfg.discretize(origin);
    if !cfg.contains(cur) {
        return Ok(());
    }

    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let cell = [cur.x, cur.y, cur.z];
    for axis in 0..3 {
        let d = dir[axis];
        if d > 0.0 {
            step[axis] = 1;
            t_max[axis] = ((cell[axis] + 1) as f64 - local[axis]) * res / d;
            t_delta[axis] = res / d;
        } else if d < 0.0 {
            step[axis] = -1;
            t_max[axis] = (local[axis] - cell[axis] as f64) * res / -d;
            t_delta[axis] = res / -d;
        }
    }

    if !visit(cur) {
        return Ok(());
    }
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[axis] >= max_range {
            return Ok(());
        }
        match axis {
            0 => cur.x += step[0],
            1 => cur.y += step[1],
            _ => cur.z += step[2],
        }
        if !cfg.contains(cur) {
            return Ok(());
        }
        t_max[axis] += t_delta[axis];
        if !visit(cur) {
            return Ok(());
        }
    }
}
