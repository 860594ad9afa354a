//! Core domain types: cameras, views, pointmaps and the aggregated scene cloud.
//!
//! Conventions used everywhere in the crate:
//!
//! - poses are camera-to-world: `p_world = R · p_cam + t`;
//! - camera frame is +x right, +y down, +z forward;
//! - pixel `(u, v)` has its center at the integer coordinate `(u, v)`;
//! - depth is z-depth along the optical axis in meters, `0` marks an invalid pixel.

use std::collections::HashMap;

use image::RgbImage;
use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

/// Points closer than this to the image plane (in meters, camera z) are culled.
pub const MIN_CAMERA_Z: f64 = 1e-6;

/// Tolerance for the in-memory rotation invariants.
pub const ROTATION_TOL: f64 = 1e-9;

/// Tolerance accepted when reading rotations from files; inputs within it are
/// re-orthonormalized to satisfy [`ROTATION_TOL`].
pub const LOAD_ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad camera for view {view}: {reason}")]
    BadCamera { view: String, reason: String },
    #[error("invalid depth in view {view}: {reason}")]
    BadDepth { view: String, reason: String },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Pinhole intrinsics with zero skew.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("nonpositive focal length ({}, {})", self.fx, self.fy));
        }
        if self.width < 1 || self.height < 1 {
            return Err(format!("empty image size {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(format!("cx {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(format!("cy {} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }

    /// Camera-frame point for pixel `(u, v)` at z-depth `z`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Continuous pixel coordinates of a camera-frame point (no culling).
    #[inline]
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking the rotation invariants at [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, String> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Builds a pose from possibly low-precision data: rotations within
    /// [`LOAD_ROTATION_TOL`] are projected onto SO(3).
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, String> {
        if !translation.iter().all(|x| x.is_finite()) {
            return Err("non-finite translation".into());
        }
        rotation_error(&rotation, LOAD_ROTATION_TOL)?;
        let rotation = if rotation_error(&rotation, ROTATION_TOL).is_ok() {
            rotation
        } else {
            let svd = rotation.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            u * vt
        };
        Self::new(rotation, translation)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err("non-finite translation".into());
        }
        rotation_error(&self.rotation, ROTATION_TOL)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    #[inline]
    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p_cam + self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p_world: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world.coords - self.translation)
    }

    /// Pose at `eye` looking at `target`, with `up` giving the world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Self {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: eye,
        }
    }
}

fn rotation_error(r: &Matrix3<f64>, tol: f64) -> Result<(), String> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err("non-finite rotation".into());
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > tol {
        return Err(format!("rotation not orthonormal (max |RᵀR − I| = {ortho:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(format!("rotation determinant {det} != +1"));
    }
    Ok(())
}

/// Intrinsics plus pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    /// Projects a world point to continuous pixel coordinates and camera z.
    /// Returns `None` for points at or behind [`MIN_CAMERA_Z`].
    #[inline]
    pub fn project(&self, p_world: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let pc = self.pose.to_camera(p_world);
        if pc.z <= MIN_CAMERA_Z {
            return None;
        }
        let (u, v) = self.intrinsics.project(&pc);
        Some((u, v, pc.z))
    }

    /// Projects and rounds to the nearest pixel; `None` when culled or out of bounds.
    #[inline]
    pub fn project_to_pixel(&self, p_world: &Point3<f64>) -> Option<(usize, usize, f64)> {
        let (u, v, z) = self.project(p_world)?;
        let (ui, vi) = (u.round(), v.round());
        if ui < 0.0 || vi < 0.0 || ui >= self.intrinsics.width as f64 || vi >= self.intrinsics.height as f64 {
            return None;
        }
        Some((ui as usize, vi as usize, z))
    }

    /// World point of pixel `(u, v)` at z-depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        self.pose.to_world(&self.intrinsics.backproject(u, v, z))
    }
}

/// Z-depth in meters; `0` is invalid.
pub type DepthMap = Grid<f32>;

/// Per-view 2D instance labels: `0` is background, any `k ≥ 1` is a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask2D {
    pub view_id: String,
    pub labels: Grid<u32>,
}

impl InstanceMask2D {
    /// Distinct nonzero labels in ascending order.
    pub fn label_set(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn region(&self, label: u32) -> Grid<bool> {
        self.labels.map(|&l| l == label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewFrame {
    pub view_id: String,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub masks: Option<InstanceMask2D>,
}

impl ViewFrame {
    pub fn camera(&self) -> Camera {
        Camera::new(self.intrinsics, self.pose)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.intrinsics.dims()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad_camera = |reason: String| SceneError::BadCamera {
            view: self.view_id.clone(),
            reason,
        };
        self.intrinsics.validate().map_err(bad_camera)?;
        self.pose.validate().map_err(bad_camera)?;
        let (w, h) = self.dims();
        if (self.rgb.width() as usize, self.rgb.height() as usize) != (w, h) {
            return Err(SceneError::ShapeMismatch(format!(
                "{}: rgb is {}x{}, camera is {w}x{h}",
                self.view_id,
                self.rgb.width(),
                self.rgb.height()
            )));
        }
        if self.depth.dims() != (w, h) {
            return Err(SceneError::ShapeMismatch(format!(
                "{}: depth is {}x{}, camera is {w}x{h}",
                self.view_id,
                self.depth.width(),
                self.depth.height()
            )));
        }
        if let Some(bad) = self.depth.iter().find(|z| !z.is_finite() || **z < 0.0) {
            return Err(SceneError::BadDepth {
                view: self.view_id.clone(),
                reason: format!("depth value {bad}"),
            });
        }
        if let Some(m) = &self.masks {
            if m.labels.dims() != (w, h) {
                return Err(SceneError::ShapeMismatch(format!(
                    "{}: masks are {}x{}, camera is {w}x{h}",
                    self.view_id,
                    m.labels.width(),
                    m.labels.height()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub scene_id: String,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(default = "default_convention")]
    pub convention: String,
}

fn default_units() -> String {
    "meters".into()
}

pub fn default_convention() -> String {
    "camera_to_world;x_right,y_down,z_forward;pixel_center_integer".into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub metadata: SceneMetadata,
    pub frames: Vec<ViewFrame>,
}

impl SceneBundle {
    /// Sorts frames by id and checks every bundle and frame invariant.
    pub fn new(metadata: SceneMetadata, mut frames: Vec<ViewFrame>) -> Result<Self, SceneError> {
        frames.sort_by(|a, b| a.view_id.cmp(&b.view_id));
        if frames.len() < 2 {
            return Err(SceneError::InvalidBundle(format!(
                "need at least 2 views, got {}",
                frames.len()
            )));
        }
        for pair in frames.windows(2) {
            if pair[0].view_id == pair[1].view_id {
                return Err(SceneError::InvalidBundle(format!(
                    "duplicate view id {}",
                    pair[0].view_id
                )));
            }
        }
        for f in &frames {
            f.validate()?;
        }
        Ok(Self { metadata, frames })
    }

    pub fn frame(&self, view_id: &str) -> Option<&ViewFrame> {
        self.frames.iter().find(|f| f.view_id == view_id)
    }

    pub fn view_ids(&self) -> Vec<String> {
        self.frames.iter().map(|f| f.view_id.clone()).collect()
    }
}

/// Pixel-aligned world points of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    pub view_id: String,
    pub points: Grid<Point3<f64>>,
    pub valid: Grid<bool>,
}

impl PointMap {
    pub fn dims(&self) -> (usize, usize) {
        self.points.dims()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count_true()
    }

    /// Restricts validity to `mask` (logical and).
    pub fn masked(&self, mask: &Grid<bool>) -> Result<PointMap, SceneError> {
        if !mask.same_dims(&self.valid) {
            return Err(SceneError::ShapeMismatch(format!(
                "{}: mask {}x{} vs pointmap {}x{}",
                self.view_id,
                mask.width(),
                mask.height(),
                self.valid.width(),
                self.valid.height()
            )));
        }
        let valid = Grid::from_fn(self.valid.width(), self.valid.height(), |u, v| {
            *self.valid.get(u, v) && *mask.get(u, v)
        });
        Ok(PointMap {
            view_id: self.view_id.clone(),
            points: self.points.clone(),
            valid,
        })
    }
}

/// Lifts every pixel with positive depth to its world position.
pub fn unproject(frame: &ViewFrame) -> PointMap {
    let cam = frame.camera();
    let (w, h) = frame.dims();
    let mut points = Grid::new(w, h, Point3::origin());
    let mut valid = Grid::new(w, h, false);
    for v in 0..h {
        for u in 0..w {
            let z = *frame.depth.get(u, v);
            if z > 0.0 {
                points.set(u, v, cam.unproject(u as f64, v as f64, z as f64));
                valid.set(u, v, true);
            }
        }
    }
    PointMap {
        view_id: frame.view_id.clone(),
        points,
        valid,
    }
}

/// Unprojects every frame in parallel, preserving order.
pub fn unproject_all(frames: &[ViewFrame]) -> Vec<PointMap> {
    frames.par_iter().map(unproject).collect()
}

/// Where a cloud point came from: view index into [`ScenePointCloud::views`] and pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointSource {
    pub view: u32,
    pub u: u32,
    pub v: u32,
}

/// The aggregated scene cloud as parallel arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePointCloud {
    /// View ids referenced by [`PointSource::view`].
    pub views: Vec<String>,
    pub positions: Vec<Point3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub source: Vec<PointSource>,
    /// `-1` is unlabeled.
    pub instance_id: Vec<i32>,
    /// `false` after a removal edit.
    pub alive: Vec<bool>,
}

impl ScenePointCloud {
    pub fn empty(views: Vec<String>) -> Self {
        Self {
            views,
            positions: Vec::new(),
            colors: Vec::new(),
            source: Vec::new(),
            instance_id: Vec::new(),
            alive: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn push(&mut self, position: Point3<f64>, color: [u8; 3], source: PointSource) {
        self.positions.push(position);
        self.colors.push(color);
        self.source.push(source);
        self.instance_id.push(-1);
        self.alive.push(true);
    }

    pub fn view_index(&self, view_id: &str) -> Option<u32> {
        self.views.iter().position(|v| v == view_id).map(|i| i as u32)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        let lens = [
            self.colors.len(),
            self.source.len(),
            self.instance_id.len(),
            self.alive.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(SceneError::LengthMismatch(format!(
                "cloud arrays have lengths {n} / {lens:?}"
            )));
        }
        if let Some(id) = self.instance_id.iter().find(|&&id| id < -1) {
            return Err(SceneError::InvalidBundle(format!("instance id {id} < -1")));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for s in &self.source {
            if s.view as usize >= self.views.len() {
                return Err(SceneError::InvalidBundle(format!(
                    "source view index {} out of range",
                    s.view
                )));
            }
            if !seen.insert(*s) {
                return Err(SceneError::InvalidBundle(format!(
                    "duplicate source record ({}, {}, {})",
                    self.views[s.view as usize], s.u, s.v
                )));
            }
        }
        Ok(())
    }

    /// Map from `(view, u, v)` to the cloud index carrying that source.
    pub fn source_index(&self) -> HashMap<PointSource, u32> {
        self.source
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i as u32))
            .collect()
    }

    /// Indices of alive points carrying `instance`.
    pub fn instance_members(&self, instance: i32) -> Vec<u32> {
        (0..self.len())
            .filter(|&i| self.alive[i] && self.instance_id[i] == instance)
            .map(|i| i as u32)
            .collect()
    }

    /// Distinct instance ids (≥ 0) carried by alive points, ascending.
    pub fn instance_ids(&self) -> Vec<i32> {
        let mut ids: Vec<i32> = self
            .instance_id
            .iter()
            .zip(&self.alive)
            .filter(|(&id, &a)| a && id >= 0)
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Concatenates the valid pixels of every pointmap (views in id order,
/// row-major within a view) into one cloud.
pub fn assemble_point_cloud(
    pointmaps: &[PointMap],
    frames: &[ViewFrame],
) -> Result<ScenePointCloud, SceneError> {
    if pointmaps.len() != frames.len() {
        return Err(SceneError::LengthMismatch(format!(
            "{} pointmaps for {} frames",
            pointmaps.len(),
            frames.len()
        )));
    }
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| frames[a].view_id.cmp(&frames[b].view_id));

    let views: Vec<String> = order.iter().map(|&i| frames[i].view_id.clone()).collect();
    let mut cloud = ScenePointCloud::empty(views);
    for (view_idx, &i) in order.iter().enumerate() {
        let (pm, frame) = (&pointmaps[i], &frames[i]);
        if pm.view_id != frame.view_id || pm.dims() != frame.dims() {
            return Err(SceneError::LengthMismatch(format!(
                "pointmap {} ({}x{}) does not match frame {}",
                pm.view_id,
                pm.dims().0,
                pm.dims().1,
                frame.view_id
            )));
        }
        for (u, v, &ok) in pm.valid.indexed() {
            if ok {
                let px = frame.rgb.get_pixel(u as u32, v as u32).0;
                cloud.push(
                    *pm.points.get(u, v),
                    px,
                    PointSource {
                        view: view_idx as u32,
                        u: u as u32,
                        v: v as u32,
                    },
                );
            }
        }
    }
    Ok(cloud)
}
