//! Analytic box-room generator.
//!
//! The room is `x ∈ [0, 6]`, `y ∈ [0, 5]` with the floor at `z = 0` and four
//! walls of unbounded height, so every camera ray inside the room hits a
//! surface. Box objects stand on the floor against the far wall (`y = 5`),
//! spaced so that no box hides another from any generated camera. Training
//! cameras sit on a ring around the room center and look inward, so each
//! camera's surroundings are in front of the cameras across the ring.
//!
//! Depth is exact z-depth from ray casting. Per-view instance masks are the
//! true object footprints with fresh random label values in every view.
//! Floaters replace a fraction of depth pixels with a scaled-down depth.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    load_label_png, load_mask_png, load_rgb_png, read_camera_file, read_depth_file, read_json, save_label_png,
    save_mask_png, save_rgb_png, write_camera_file, write_depth_file, write_json,
};
use crate::grid::Grid;
use crate::scene::{
    default_convention, Camera, CameraIntrinsics, CameraPose, InstanceMask2D, SceneBundle, SceneError, SceneMetadata,
    ScenePointCloud, ViewFrame,
};

pub const ROOM_X: f64 = 6.0;
pub const ROOM_Y: f64 = 5.0;
pub const MAX_OBJECTS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub views: usize,
    pub objects: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels for both axes.
    pub focal: f64,
    /// Fraction of each view's pixels turned into floaters.
    pub floater_fraction: f64,
    /// Floater depth as a multiple of the true depth.
    pub floater_depth_ratio: f64,
    pub test_views: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            views: 8,
            objects: 5,
            width: 192,
            height: 144,
            focal: 120.0,
            floater_fraction: 0.0,
            floater_depth_ratio: 0.4,
            test_views: 2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.views < 2 {
            return Err("need at least 2 views".into());
        }
        if self.objects > MAX_OBJECTS {
            return Err(format!("at most {MAX_OBJECTS} objects fit the room"));
        }
        if self.width < 8 || self.height < 8 {
            return Err("image must be at least 8x8".into());
        }
        if !(self.focal > 0.0) {
            return Err("focal must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.floater_fraction) {
            return Err("floater_fraction must be in [0, 1]".into());
        }
        if !(self.floater_depth_ratio > 0.0 && self.floater_depth_ratio < 1.0) {
            return Err("floater_depth_ratio must be in (0, 1)".into());
        }
        Ok(())
    }

    fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width as u32,
            height: self.height as u32,
        }
    }
}

/// Axis-aligned box object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub id: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [u8; 3],
}

/// The first `n` box slots along the far wall.
pub fn layout_boxes(n: usize) -> Vec<BoxObject> {
    const HEIGHTS: [f64; MAX_OBJECTS] = [0.9, 1.2, 0.7, 1.0, 0.8, 1.1];
    const DEPTHS: [f64; MAX_OBJECTS] = [0.3, 0.25, 0.3, 0.2, 0.3, 0.25];
    const COLORS: [[u8; 3]; MAX_OBJECTS] = [
        [200, 40, 40],
        [40, 160, 60],
        [50, 70, 200],
        [220, 180, 30],
        [160, 50, 170],
        [30, 170, 180],
    ];
    let (x0, x1) = (0.4, ROOM_X - 0.4);
    let cell = (x1 - x0) / n.max(1) as f64;
    (0..n)
        .map(|k| {
            let cx = x0 + cell * (k as f64 + 0.5);
            let half = 0.3 * cell;
            BoxObject {
                id: k,
                min: [cx - half, ROOM_Y - DEPTHS[k], 0.0],
                max: [cx + half, ROOM_Y, HEIGHTS[k]],
                color: COLORS[k],
            }
        })
        .collect()
}

/// What a ray hit: `Some(k)` for box `k`, `None` for the room shell.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hit {
    t: f64,
    object: Option<usize>,
    /// 0 floor, 1..=4 walls x0, x1, y0, y1; for boxes the face axis.
    surface: usize,
}

fn cast(origin: &Vector3<f64>, dir: &Vector3<f64>, boxes: &[BoxObject]) -> Hit {
    let mut best = Hit {
        t: f64::INFINITY,
        object: None,
        surface: 0,
    };
    let planes = [
        (2, 0.0, 0usize),
        (0, 0.0, 1),
        (0, ROOM_X, 2),
        (1, 0.0, 3),
        (1, ROOM_Y, 4),
    ];
    for (axis, pos, surface) in planes {
        if dir[axis].abs() < 1e-15 {
            continue;
        }
        let t = (pos - origin[axis]) / dir[axis];
        if t > 0.0 && t < best.t {
            best = Hit {
                t,
                object: None,
                surface,
            };
        }
    }
    for b in boxes {
        let (mut t_in, mut t_out, mut face) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < b.min[a] || origin[a] > b.max[a] {
                    t_in = f64::INFINITY;
                }
                continue;
            }
            let (ta, tb) = ((b.min[a] - origin[a]) / dir[a], (b.max[a] - origin[a]) / dir[a]);
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            if lo > t_in {
                t_in = lo;
                face = a;
            }
            t_out = t_out.min(hi);
        }
        if t_in <= t_out && t_in > 0.0 && t_in < best.t {
            best = Hit {
                t: t_in,
                object: Some(b.id),
                surface: face,
            };
        }
    }
    best
}

fn shade(hit: &Hit, p: &Vector3<f64>, boxes: &[BoxObject]) -> [u8; 3] {
    let (base, cell, coords) = match hit.object {
        Some(k) => {
            let c = boxes[k].color;
            let uv = match hit.surface {
                0 => (p.y, p.z),
                1 => (p.x, p.z),
                _ => (p.x, p.y),
            };
            (c, 0.15, uv)
        }
        None => match hit.surface {
            0 => ([150, 130, 110], 0.5, (p.x, p.y)),
            1 => ([190, 180, 160], 0.4, (p.y, p.z)),
            2 => ([170, 185, 195], 0.4, (p.y, p.z)),
            3 => ([185, 175, 190], 0.4, (p.x, p.z)),
            _ => ([200, 195, 175], 0.4, (p.x, p.z)),
        },
    };
    let checker = ((coords.0 / cell).floor() as i64 + (coords.1 / cell).floor() as i64).rem_euclid(2);
    let wave = 12.0 * (2.1 * coords.0 + 1.3 * coords.1).sin();
    let offset = if checker == 0 { 22.0 } else { -22.0 } + wave;
    base.map(|c| (c as f64 + offset).round().clamp(0.0, 255.0) as u8)
}

/// Analytic rendering of one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: Grid<f32>,
    /// `0` none, `k + 1` for object `k`.
    pub objects: Grid<u32>,
}

/// Surface hit along the ray through continuous pixel `(u, v)`: world point,
/// z-depth and object index.
pub fn ray_hit(camera: &Camera, boxes: &[BoxObject], u: f64, v: f64) -> (Point3<f64>, f64, Option<usize>) {
    let dir = camera.pose.rotation * camera.intrinsics.backproject(u, v, 1.0);
    let origin = camera.pose.translation;
    let hit = cast(&origin, &dir, boxes);
    (Point3::from(origin + dir * hit.t), hit.t, hit.object)
}

pub fn render_view(camera: &Camera, boxes: &[BoxObject]) -> RenderedView {
    let k = camera.intrinsics;
    let (w, h) = k.dims();
    let mut rgb = RgbImage::new(w as u32, h as u32);
    let mut depth = Grid::new(w, h, 0.0f32);
    let mut objects = Grid::new(w, h, 0u32);
    let origin = camera.pose.translation;
    for v in 0..h {
        for u in 0..w {
            let d_cam = k.backproject(u as f64, v as f64, 1.0);
            let dir = camera.pose.rotation * d_cam;
            let hit = cast(&origin, &dir, boxes);
            let p = origin + dir * hit.t;
            rgb.put_pixel(u as u32, v as u32, Rgb(shade(&hit, &p, boxes)));
            // d_cam has unit z, so the ray parameter is the z-depth
            depth.set(u, v, hit.t as f32);
            objects.set(u, v, hit.object.map_or(0, |o| o as u32 + 1));
        }
    }
    RenderedView { rgb, depth, objects }
}

pub const RING_CENTER: [f64; 2] = [3.0, 2.5];
pub const RING_RADIUS: f64 = 1.8;
pub const CAMERA_HEIGHT: f64 = 1.6;
const TARGET_HEIGHT: f64 = 0.5;

/// Camera on the horizontal ring at `angle_deg`, looking at the room center.
pub fn ring_pose(angle_deg: f64, radius: f64, height: f64) -> CameraPose {
    let a = angle_deg.to_radians();
    let (cx, cy) = (RING_CENTER[0], RING_CENTER[1]);
    let eye = Vector3::new(cx + radius * a.cos(), cy + radius * a.sin(), height);
    CameraPose::look_at(eye, Vector3::new(cx, cy, TARGET_HEIGHT), Vector3::z())
}

pub fn training_angle(k: usize, n: usize) -> f64 {
    RING_START_DEG + 360.0 * k as f64 / n as f64
}

const RING_START_DEG: f64 = -90.0;

fn training_pose(k: usize, n: usize) -> CameraPose {
    ring_pose(training_angle(k, n), RING_RADIUS, CAMERA_HEIGHT)
}

/// Held-out cameras spread over the front arc facing the boxes, slightly
/// lower and closer than the training ring.
fn test_pose(k: usize, n: usize) -> CameraPose {
    let angle = RING_START_DEG + 60.0 * ((k as f64 + 0.5) / n as f64 - 0.5);
    ring_pose(angle, RING_RADIUS - 0.3, CAMERA_HEIGHT - 0.15)
}

/// Held-out ground-truth view for novel-view evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TestView {
    pub view_id: String,
    pub camera: Camera,
    pub rgb: RgbImage,
    pub depth: Grid<f32>,
}

/// Per-view generator annotations, in bundle frame order.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<BoxObject>,
    pub view_ids: Vec<String>,
    /// True training cameras; eval aligns these with the bundle's poses.
    pub cameras: Vec<Camera>,
    /// `0` none, `k + 1` for object `k`.
    pub object_labels: Vec<Grid<u32>>,
    pub floaters: Vec<Grid<bool>>,
    pub true_depth: Vec<Grid<f32>>,
    pub test_views: Vec<TestView>,
}

impl GroundTruth {
    /// Object id of each cloud point's source pixel, `-1` for room surfaces.
    pub fn point_labels(&self, cloud: &ScenePointCloud) -> Result<Vec<i32>, SceneError> {
        let slots: Vec<usize> = cloud
            .views
            .iter()
            .map(|v| {
                self.view_ids
                    .iter()
                    .position(|g| g == v)
                    .ok_or_else(|| SceneError::InvalidBundle(format!("no ground truth for view {v}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(cloud
            .source
            .iter()
            .map(|s| *self.object_labels[slots[s.view as usize]].get(s.u as usize, s.v as usize) as i32 - 1)
            .collect())
    }

    /// Whether each cloud point came from a floater pixel.
    pub fn point_floaters(&self, cloud: &ScenePointCloud) -> Result<Vec<bool>, SceneError> {
        let mut out = Vec::with_capacity(cloud.len());
        for s in &cloud.source {
            let view = &cloud.views[s.view as usize];
            let slot = self
                .view_ids
                .iter()
                .position(|g| g == view)
                .ok_or_else(|| SceneError::InvalidBundle(format!("no ground truth for view {view}")))?;
            out.push(*self.floaters[slot].get(s.u as usize, s.v as usize));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub bundle: SceneBundle,
    pub gt: GroundTruth,
}

/// Renders the room. Panics on an invalid config; call [`SynthConfig::validate`] first
/// when the config comes from user input.
pub fn generate(cfg: &SynthConfig) -> SynthScene {
    cfg.validate().expect("invalid synth config");
    let boxes = layout_boxes(cfg.objects);
    let intr = cfg.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let npix = cfg.width * cfg.height;
    let n_float = (cfg.floater_fraction * npix as f64).round() as usize;

    let mut frames = Vec::with_capacity(cfg.views);
    let mut gt = GroundTruth {
        objects: boxes.clone(),
        view_ids: Vec::new(),
        cameras: Vec::new(),
        object_labels: Vec::new(),
        floaters: Vec::new(),
        true_depth: Vec::new(),
        test_views: Vec::new(),
    };
    for k in 0..cfg.views {
        let view_id = format!("v{k:02}");
        let camera = Camera::new(intr, training_pose(k, cfg.views));
        let r = render_view(&camera, &boxes);

        // fresh, non-consecutive label values per view
        let mut label_of = vec![0u32; boxes.len() + 1];
        let picks = sample(&mut rng, 1000, boxes.len());
        for (o, p) in picks.iter().enumerate() {
            label_of[o + 1] = p as u32 + 1;
        }
        let labels = r.objects.map(|&o| label_of[o as usize]);

        let mut depth = r.depth.clone();
        let mut floaters = Grid::new(cfg.width, cfg.height, false);
        if n_float > 0 {
            for i in sample(&mut rng, npix, n_float) {
                floaters.as_mut_slice()[i] = true;
                depth.as_mut_slice()[i] *= cfg.floater_depth_ratio as f32;
            }
        }

        frames.push(ViewFrame {
            view_id: view_id.clone(),
            rgb: r.rgb,
            depth,
            intrinsics: intr,
            pose: camera.pose,
            masks: Some(InstanceMask2D {
                view_id: view_id.clone(),
                labels,
            }),
        });
        gt.view_ids.push(view_id);
        gt.cameras.push(camera);
        gt.object_labels.push(r.objects);
        gt.floaters.push(floaters);
        gt.true_depth.push(r.depth);
    }
    for k in 0..cfg.test_views {
        let camera = Camera::new(intr, test_pose(k, cfg.test_views));
        let r = render_view(&camera, &boxes);
        gt.test_views.push(TestView {
            view_id: format!("t{k:02}"),
            camera,
            rgb: r.rgb,
            depth: r.depth,
        });
    }
    let metadata = SceneMetadata {
        scene_id: format!("synth-room-{}", cfg.seed),
        units: "meters".into(),
        convention: default_convention(),
    };
    let bundle = SceneBundle::new(metadata, frames).expect("generator produced an invalid bundle");
    SynthScene { bundle, gt }
}

#[derive(Serialize, Deserialize)]
struct GtIndex {
    objects: Vec<BoxObject>,
    views: Vec<String>,
    test_views: Vec<String>,
}

/// Layout: `gt.json`, `views/<id>/{camera.json, objects.png, floaters.png, depth.f32}`,
/// `test_views/<id>/{camera.json, rgb.png, depth.f32}`.
pub fn write_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<(), SceneError> {
    write_json(
        &dir.join("gt.json"),
        &GtIndex {
            objects: gt.objects.clone(),
            views: gt.view_ids.clone(),
            test_views: gt.test_views.iter().map(|t| t.view_id.clone()).collect(),
        },
    )?;
    for (i, id) in gt.view_ids.iter().enumerate() {
        let d = dir.join("views").join(id);
        write_camera_file(&d.join("camera.json"), &gt.cameras[i])?;
        save_label_png(&d.join("objects.png"), &gt.object_labels[i])?;
        save_mask_png(&d.join("floaters.png"), &gt.floaters[i])?;
        write_depth_file(&d.join("depth.f32"), &gt.true_depth[i])?;
    }
    for t in &gt.test_views {
        let d = dir.join("test_views").join(&t.view_id);
        write_camera_file(&d.join("camera.json"), &t.camera)?;
        save_rgb_png(&d.join("rgb.png"), &t.rgb)?;
        write_depth_file(&d.join("depth.f32"), &t.depth)?;
    }
    Ok(())
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth, SceneError> {
    let index: GtIndex = read_json(&dir.join("gt.json"))?;
    let mut gt = GroundTruth {
        objects: index.objects,
        view_ids: index.views.clone(),
        cameras: Vec::new(),
        object_labels: Vec::new(),
        floaters: Vec::new(),
        true_depth: Vec::new(),
        test_views: Vec::new(),
    };
    for id in &index.views {
        let d = dir.join("views").join(id);
        gt.cameras.push(read_camera_file(&d.join("camera.json"))?);
        gt.object_labels.push(load_label_png(&d.join("objects.png"))?);
        gt.floaters.push(load_mask_png(&d.join("floaters.png"))?);
        gt.true_depth.push(read_depth_file(&d.join("depth.f32"))?);
    }
    for id in &index.test_views {
        let d = dir.join("test_views").join(id);
        gt.test_views.push(TestView {
            view_id: id.clone(),
            camera: read_camera_file(&d.join("camera.json"))?,
            rgb: load_rgb_png(&d.join("rgb.png"))?,
            depth: read_depth_file(&d.join("depth.f32"))?,
        });
    }
    Ok(gt)
}

/// World point at a view's pixel using the true depth.
pub fn true_point(gt: &GroundTruth, frame: &ViewFrame, u: usize, v: usize) -> Option<Point3<f64>> {
    let slot = gt.view_ids.iter().position(|id| id == &frame.view_id)?;
    let z = *gt.true_depth[slot].get(u, v) as f64;
    (z > 0.0).then(|| frame.camera().unproject(u as f64, v as f64, z))
}
