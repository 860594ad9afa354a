//! Scene bundle directory format and the raw buffer files shared by the pipeline.
//!
//! ```text
//! scene.json                  {"scene_id", "units", "convention", "views": [...]}
//! views/<id>/rgb.png          8-bit RGB
//! views/<id>/depth.f32        "DPTH" u32 w, u32 h, u32 0, then w*h little-endian f32
//! views/<id>/camera.json      {fx, fy, cx, cy, width, height, rotation[9], translation[3]}
//! views/<id>/masks.png        optional 16-bit label image, 0 = no instance
//! views/<id>/masks/masks.json optional alternative: per-mask binary PNGs
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, GrayImage, ImageBuffer, ImageEncoder, Luma, RgbImage};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::scene::{
    default_convention, Camera, CameraIntrinsics, CameraPose, InstanceMask2D, SceneBundle,
    SceneError, SceneMetadata, ViewFrame,
};

pub const DEPTH_MAGIC: [u8; 4] = *b"DPTH";
pub const INSTANCE_MAGIC: [u8; 4] = *b"INST";
const HEADER_LEN: usize = 16;

fn io_err(path: &Path, e: impl std::fmt::Display) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> SceneError {
    SceneError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// `camera.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major 3×3 camera-to-world rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraFile {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = &cam.pose.rotation;
        let k = &cam.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [
                cam.pose.translation.x,
                cam.pose.translation.y,
                cam.pose.translation.z,
            ],
        }
    }

    /// Validates and converts; rotations are accepted at load tolerance.
    pub fn to_camera(&self) -> Result<Camera, String> {
        let intrinsics = CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        intrinsics.validate()?;
        let pose = CameraPose::from_approx(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_column_slice(&self.translation),
        )?;
        Ok(Camera::new(intrinsics, pose))
    }
}

pub fn read_camera_file(path: &Path) -> Result<Camera, SceneError> {
    let cf: CameraFile = read_json(path)?;
    cf.to_camera().map_err(|reason| SceneError::BadCamera {
        view: path.display().to_string(),
        reason,
    })
}

pub fn write_camera_file(path: &Path, cam: &Camera) -> Result<(), SceneError> {
    write_json(path, &CameraFile::from_camera(cam))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    #[serde(default = "default_units")]
    units: String,
    #[serde(default = "default_convention")]
    convention: String,
    views: Vec<String>,
}

fn default_units() -> String {
    "meters".into()
}

/// Index of per-mask binary PNGs, the alternative to `masks.png`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskIndex {
    pub masks: Vec<MaskIndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskIndexEntry {
    pub label: u32,
    pub file: String,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneError::MissingFile(path.display().to_string())
        } else {
            io_err(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), SceneError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    Ok(())
}

fn write_raw(path: &Path, magic: [u8; 4], w: usize, h: usize, payload: impl Iterator<Item = [u8; 4]>) -> Result<(), SceneError> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&magic);
    header[4..8].copy_from_slice(&(w as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(h as u32).to_le_bytes());
    out.write_all(&header).map_err(|e| io_err(path, e))?;
    for word in payload {
        out.write_all(&word).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

fn read_raw(path: &Path, magic: [u8; 4]) -> Result<(usize, usize, Vec<[u8; 4]>), SceneError> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneError::MissingFile(path.display().to_string())
        } else {
            io_err(path, e)
        }
    })?;
    decode_raw(&bytes, magic).map_err(|r| format_err(path, r))
}

fn decode_raw(bytes: &[u8], magic: [u8; 4]) -> Result<(usize, usize, Vec<[u8; 4]>), String> {
    if bytes.len() < HEADER_LEN {
        return Err("truncated header".into());
    }
    if bytes[..4] != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        ));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != w * h * 4 {
        return Err(format!("payload is {} bytes, expected {} for {w}x{h}", body.len(), w * h * 4));
    }
    Ok((w, h, body.chunks_exact(4).map(|c| c.try_into().unwrap()).collect()))
}

pub fn write_depth_file(path: &Path, depth: &Grid<f32>) -> Result<(), SceneError> {
    write_raw(path, DEPTH_MAGIC, depth.width(), depth.height(), depth.iter().map(|z| z.to_le_bytes()))
}

pub fn read_depth_file(path: &Path) -> Result<Grid<f32>, SceneError> {
    let (w, h, words) = read_raw(path, DEPTH_MAGIC)?;
    Ok(Grid::from_vec(w, h, words.into_iter().map(f32::from_le_bytes).collect()).unwrap())
}

pub fn decode_depth_bytes(bytes: &[u8]) -> Result<Grid<f32>, String> {
    let (w, h, words) = decode_raw(bytes, DEPTH_MAGIC)?;
    Ok(Grid::from_vec(w, h, words.into_iter().map(f32::from_le_bytes).collect()).unwrap())
}

pub fn write_instance_file(path: &Path, ids: &Grid<i32>) -> Result<(), SceneError> {
    write_raw(path, INSTANCE_MAGIC, ids.width(), ids.height(), ids.iter().map(|i| i.to_le_bytes()))
}

pub fn read_instance_file(path: &Path) -> Result<Grid<i32>, SceneError> {
    let (w, h, words) = read_raw(path, INSTANCE_MAGIC)?;
    Ok(Grid::from_vec(w, h, words.into_iter().map(i32::from_le_bytes).collect()).unwrap())
}

/// PNG bytes with fixed encoder settings so output is reproducible.
pub fn encode_png(buf: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(buf, w, h, color)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn write_png(path: &Path, buf: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<(), SceneError> {
    ensure_parent(path)?;
    let bytes = encode_png(buf, w, h, color).map_err(|e| format_err(path, e))?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn rgb_png_bytes(img: &RgbImage) -> Vec<u8> {
    encode_png(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .expect("in-memory png encoding")
}

pub fn mask_png_bytes(mask: &Grid<bool>) -> Vec<u8> {
    let buf: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_png(&buf, mask.width() as u32, mask.height() as u32, ExtendedColorType::L8)
        .expect("in-memory png encoding")
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<(), SceneError> {
    write_png(path, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// 8-bit mask, 255 = true.
pub fn save_mask_png(path: &Path, mask: &Grid<bool>) -> Result<(), SceneError> {
    let buf: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, &buf, mask.width() as u32, mask.height() as u32, ExtendedColorType::L8)
}

/// 16-bit label image.
pub fn save_label_png(path: &Path, labels: &Grid<u32>) -> Result<(), SceneError> {
    if let Some(l) = labels.iter().find(|&&l| l > u16::MAX as u32) {
        return Err(format_err(path, format!("label {l} does not fit in 16 bits")));
    }
    let buf: Vec<u8> = labels
        .iter()
        .flat_map(|&l| (l as u16).to_ne_bytes())
        .collect();
    write_png(path, &buf, labels.width() as u32, labels.height() as u32, ExtendedColorType::L16)
}

fn open_image(path: &Path) -> Result<image::DynamicImage, SceneError> {
    if !path.exists() {
        return Err(SceneError::MissingFile(path.display().to_string()));
    }
    image::open(path).map_err(|e| format_err(path, e.to_string()))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage, SceneError> {
    Ok(open_image(path)?.to_rgb8())
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, String> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| e.to_string())
}

/// Any nonzero pixel is `true`.
pub fn load_mask_png(path: &Path) -> Result<Grid<bool>, SceneError> {
    let img: GrayImage = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(w as usize, h as usize, img.into_raw().into_iter().map(|p| p != 0).collect()).unwrap())
}

pub fn load_label_png(path: &Path) -> Result<Grid<u32>, SceneError> {
    let img = open_image(path)?;
    let labels: ImageBuffer<Luma<u16>, Vec<u16>> = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        image::DynamicImage::ImageLuma8(b) => {
            let (w, h) = b.dimensions();
            ImageBuffer::from_fn(w, h, |x, y| Luma([b.get_pixel(x, y).0[0] as u16]))
        }
        other => {
            return Err(format_err(
                path,
                format!("expected single-channel label image, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = labels.dimensions();
    Ok(Grid::from_vec(w as usize, h as usize, labels.into_raw().into_iter().map(u32::from).collect()).unwrap())
}

/// Builds a label image from a `masks.json` index of binary PNGs. Later
/// entries overwrite earlier ones where masks overlap.
pub fn load_mask_dir(dir: &Path, view_id: &str) -> Result<InstanceMask2D, SceneError> {
    let index: MaskIndex = read_json(&dir.join("masks.json"))?;
    let mut labels: Option<Grid<u32>> = None;
    for entry in &index.masks {
        if entry.label == 0 {
            return Err(format_err(&dir.join("masks.json"), "mask label 0 is reserved for background"));
        }
        let m = load_mask_png(&dir.join(&entry.file))?;
        let grid = labels.get_or_insert_with(|| Grid::new(m.width(), m.height(), 0));
        if !grid.same_dims(&m) {
            return Err(SceneError::ShapeMismatch(format!(
                "{view_id}/masks/{}: {}x{} vs {}x{}",
                entry.file,
                m.width(),
                m.height(),
                grid.width(),
                grid.height()
            )));
        }
        for (i, &on) in m.iter().enumerate() {
            if on {
                grid.as_mut_slice()[i] = entry.label;
            }
        }
    }
    let labels = labels.ok_or_else(|| format_err(&dir.join("masks.json"), "empty mask index"))?;
    Ok(InstanceMask2D {
        view_id: view_id.to_string(),
        labels,
    })
}

pub fn view_dir(root: &Path, view_id: &str) -> PathBuf {
    root.join("views").join(view_id)
}

fn load_view(root: &Path, view_id: &str) -> Result<ViewFrame, SceneError> {
    let dir = view_dir(root, view_id);
    let require = |name: &str, label: &str| -> Result<PathBuf, SceneError> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(SceneError::MissingFile(format!("{view_id}/{label}")))
        }
    };
    let rgb_path = require("rgb.png", "rgb")?;
    let depth_path = require("depth.f32", "depth")?;
    let camera_path = require("camera.json", "camera")?;

    let cf: CameraFile = read_json(&camera_path)?;
    let cam = cf.to_camera().map_err(|reason| SceneError::BadCamera {
        view: view_id.to_string(),
        reason,
    })?;
    let rgb = load_rgb_png(&rgb_path)?;
    let depth = read_depth_file(&depth_path)?;

    let masks = if dir.join("masks.png").is_file() {
        Some(InstanceMask2D {
            view_id: view_id.to_string(),
            labels: load_label_png(&dir.join("masks.png"))?,
        })
    } else if dir.join("masks").join("masks.json").is_file() {
        Some(load_mask_dir(&dir.join("masks"), view_id)?)
    } else {
        None
    };

    let frame = ViewFrame {
        view_id: view_id.to_string(),
        rgb,
        depth,
        intrinsics: cam.intrinsics,
        pose: cam.pose,
        masks,
    };
    frame.validate()?;
    Ok(frame)
}

/// Loads and validates a bundle directory. Frames come back sorted by view id.
pub fn load_scene_bundle(path: &Path) -> Result<SceneBundle, SceneError> {
    let scene_path = path.join("scene.json");
    if !scene_path.is_file() {
        return Err(SceneError::MissingFile("scene.json".into()));
    }
    let scene: SceneFile = read_json(&scene_path)?;
    let frames = scene
        .views
        .par_iter()
        .map(|id| load_view(path, id))
        .collect::<Result<Vec<_>, _>>()?;
    SceneBundle::new(
        SceneMetadata {
            scene_id: scene.scene_id,
            units: scene.units,
            convention: scene.convention,
        },
        frames,
    )
}

/// Writes a bundle in the directory format read by [`load_scene_bundle`].
pub fn write_scene_bundle(path: &Path, bundle: &SceneBundle) -> Result<(), SceneError> {
    let scene = SceneFile {
        scene_id: bundle.metadata.scene_id.clone(),
        units: bundle.metadata.units.clone(),
        convention: bundle.metadata.convention.clone(),
        views: bundle.view_ids(),
    };
    write_json(&path.join("scene.json"), &scene)?;
    for f in &bundle.frames {
        let dir = view_dir(path, &f.view_id);
        save_rgb_png(&dir.join("rgb.png"), &f.rgb)?;
        write_depth_file(&dir.join("depth.f32"), &f.depth)?;
        write_camera_file(&dir.join("camera.json"), &f.camera())?;
        if let Some(m) = &f.masks {
            save_label_png(&dir.join("masks.png"), &m.labels)?;
        }
    }
    Ok(())
}
