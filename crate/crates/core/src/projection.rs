//! Z-buffered point rasterization and cross-view depth warping.
//!
//! Every point is moved into the camera frame (`p_cam = Rᵀ·(p − t)`), culled
//! when `p_cam.z ≤ 1e-6`, and lands on the nearest integer pixel of
//! `(fx·x/z + cx, fy·y/z + cy)`. Out-of-bounds landings are dropped.
//!
//! Resolution is done in two passes so the result never depends on the
//! schedule: the depth buffer holds the exact per-pixel minimum, and the
//! winner (color/instance source) is the lowest point index whose depth is
//! within `z_epsilon` (relative) of that minimum.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    load_mask_png, load_rgb_png, read_depth_file, read_instance_file, save_mask_png, save_rgb_png,
    write_depth_file, write_instance_file,
};
use crate::grid::Grid;
use crate::scene::{Camera, CameraIntrinsics, CameraPose, PointMap, SceneError, ScenePointCloud};

pub const NO_WINNER: u32 = u32::MAX;
pub const MAX_SPLAT_RADIUS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatOptions {
    /// Square splat half-size in pixels; `0` writes a single pixel.
    pub splat_radius: u32,
    /// Relative depth tolerance under which two landings tie.
    pub z_epsilon: f64,
}

impl Default for SplatOptions {
    fn default() -> Self {
        Self {
            splat_radius: 0,
            z_epsilon: 1e-6,
        }
    }
}

impl SplatOptions {
    pub fn with_radius(splat_radius: u32) -> Self {
        Self {
            splat_radius,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.splat_radius > MAX_SPLAT_RADIUS {
            return Err(format!("splat_radius {} exceeds {MAX_SPLAT_RADIUS}", self.splat_radius));
        }
        if !(self.z_epsilon > 0.0 && self.z_epsilon < 0.1) {
            return Err(format!("z_epsilon {} outside (0, 0.1)", self.z_epsilon));
        }
        Ok(())
    }
}

/// A rendering of the cloud into one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    /// Sparse colors; uncovered pixels are black.
    pub rgb: RgbImage,
    pub coverage: Grid<bool>,
    /// Z-buffer in meters, `+inf` where uncovered.
    pub depth: Grid<f32>,
    /// Winning instance id, `-1` where uncovered.
    pub instance: Grid<i32>,
}

impl ProjectionResult {
    pub fn dims(&self) -> (usize, usize) {
        self.coverage.dims()
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.count_true()
    }

    /// Checks the coverage/depth/instance consistency invariants.
    pub fn validate(&self) -> Result<(), String> {
        let (w, h) = self.dims();
        if self.depth.dims() != (w, h)
            || self.instance.dims() != (w, h)
            || (self.rgb.width() as usize, self.rgb.height() as usize) != (w, h)
        {
            return Err("projection buffers disagree in size".into());
        }
        for i in 0..w * h {
            let covered = self.coverage.as_slice()[i];
            let z = self.depth.as_slice()[i];
            let inst = self.instance.as_slice()[i];
            if covered {
                if !(z.is_finite() && z > 0.0) {
                    return Err(format!("covered pixel {i} has depth {z}"));
                }
            } else if z != f32::INFINITY || inst != -1 {
                return Err(format!("uncovered pixel {i} has depth {z}, instance {inst}"));
            }
        }
        Ok(())
    }

    /// Writes `proj_rgb.png`, `proj_mask.png`, `proj_depth.f32` and `proj_instance.i32`.
    pub fn save(&self, dir: &Path) -> Result<(), SceneError> {
        save_rgb_png(&dir.join("proj_rgb.png"), &self.rgb)?;
        save_mask_png(&dir.join("proj_mask.png"), &self.coverage)?;
        write_depth_file(&dir.join("proj_depth.f32"), &self.depth)?;
        write_instance_file(&dir.join("proj_instance.i32"), &self.instance)
    }

    pub fn load(dir: &Path) -> Result<Self, SceneError> {
        let proj = Self {
            rgb: load_rgb_png(&dir.join("proj_rgb.png"))?,
            coverage: load_mask_png(&dir.join("proj_mask.png"))?,
            depth: read_depth_file(&dir.join("proj_depth.f32"))?,
            instance: read_instance_file(&dir.join("proj_instance.i32"))?,
        };
        proj.validate().map_err(|reason| SceneError::Format {
            path: dir.display().to_string(),
            reason,
        })?;
        Ok(proj)
    }
}

/// Per-pixel nearest depth and the index of the point that owns the pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ZBuffer {
    pub depth: Grid<f64>,
    pub winner: Grid<u32>,
}

#[inline]
fn splat_span(center: usize, radius: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(radius)..=(center + radius).min(len - 1)
}

/// Rasterizes `positions[i]` for every `i` accepted by `include`.
pub fn rasterize(
    camera: &Camera,
    positions: &[Point3<f64>],
    include: impl Fn(usize) -> bool + Sync,
    opts: &SplatOptions,
) -> ZBuffer {
    let (w, h) = camera.intrinsics.dims();
    let r = opts.splat_radius as usize;

    let landings: Vec<Option<(usize, usize, f64)>> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| if include(i) { camera.project_to_pixel(p) } else { None })
        .collect();

    let mut depth = Grid::new(w, h, f64::INFINITY);
    for &(u, v, z) in landings.iter().flatten() {
        for vv in splat_span(v, r, h) {
            for uu in splat_span(u, r, w) {
                let d = depth.get_mut(uu, vv);
                if z < *d {
                    *d = z;
                }
            }
        }
    }

    let mut winner = Grid::new(w, h, NO_WINNER);
    for (i, landing) in landings.iter().enumerate() {
        let Some((u, v, z)) = *landing else { continue };
        for vv in splat_span(v, r, h) {
            for uu in splat_span(u, r, w) {
                let zmin = *depth.get(uu, vv);
                let slot = winner.get_mut(uu, vv);
                if *slot == NO_WINNER && z - zmin < opts.z_epsilon * zmin {
                    *slot = i as u32;
                }
            }
        }
    }
    ZBuffer { depth, winner }
}

/// Renders the cloud into a camera with a z-buffer.
pub fn project_points(
    cloud: &ScenePointCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &SplatOptions,
    only_alive: bool,
) -> ProjectionResult {
    let camera = Camera::new(*intrinsics, *pose);
    let zb = rasterize(&camera, &cloud.positions, |i| !only_alive || cloud.alive[i], opts);
    let (w, h) = camera.intrinsics.dims();
    let mut rgb = RgbImage::new(w as u32, h as u32);
    let mut coverage = Grid::new(w, h, false);
    let mut depth = Grid::new(w, h, f32::INFINITY);
    let mut instance = Grid::new(w, h, -1);
    for (u, v, &idx) in zb.winner.indexed() {
        if idx == NO_WINNER {
            continue;
        }
        let i = idx as usize;
        rgb.put_pixel(u as u32, v as u32, Rgb(cloud.colors[i]));
        coverage.set(u, v, true);
        depth.set(u, v, *zb.depth.get(u, v) as f32);
        instance.set(u, v, cloud.instance_id[i]);
    }
    ProjectionResult {
        rgb,
        coverage,
        depth,
        instance,
    }
}

/// Depth of one view's points as seen from another camera; `+inf` where
/// nothing lands.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedDepth {
    pub values: Grid<f64>,
}

impl WarpedDepth {
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let z = *self.values.get(u, v);
        z.is_finite().then_some(z)
    }
}

/// Single-pixel z-buffered warp of a pointmap's valid points into a target camera.
pub fn warp_depth(pointmap: &PointMap, target_intrinsics: &CameraIntrinsics, target_pose: &CameraPose) -> WarpedDepth {
    let camera = Camera::new(*target_intrinsics, *target_pose);
    let valid = pointmap.valid.as_slice();
    let zb = rasterize(
        &camera,
        pointmap.points.as_slice(),
        |i| valid[i],
        &SplatOptions::default(),
    );
    WarpedDepth { values: zb.depth }
}

/// Pixels hit by any of `points` (with a square splat), without depth testing.
pub fn footprint_mask<'a>(
    camera: &Camera,
    points: impl IntoIterator<Item = &'a Point3<f64>>,
    splat_radius: u32,
) -> Grid<bool> {
    let (w, h) = camera.intrinsics.dims();
    let r = splat_radius as usize;
    let mut mask = Grid::new(w, h, false);
    for p in points {
        if let Some((u, v, _)) = camera.project_to_pixel(p) {
            for vv in splat_span(v, r, h) {
                for uu in splat_span(u, r, w) {
                    mask.set(uu, vv, true);
                }
            }
        }
    }
    mask
}
