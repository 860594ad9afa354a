//! Render jobs: a z-buffered projection of the (edited) cloud into a target
//! camera, plus reference images with removed-object pixels blanked, handed
//! to an inpainting backend.

mod baseline;
mod external;

pub use baseline::{baseline_inpaint, BaselineBackend};
pub use external::{ExternalBackend, ExternalOptions};

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{load_mask_png, load_rgb_png, read_json, save_mask_png, save_rgb_png, write_json, CameraFile};
use crate::edit::{reference_masks, EditError, EditLog, EditOp};
use crate::grid::Grid;
use crate::projection::{project_points, ProjectionResult, SplatOptions};
use crate::scene::{Camera, SceneError, ScenePointCloud, ViewFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("cloud has no alive points")]
    EmptyCloud,
    #[error("backend unavailable after {attempts} attempt(s): {detail}")]
    BackendUnavailable { attempts: u32, detail: String },
    #[error("bad backend response: {0}")]
    BadResponse(String),
    #[error("backend altered {count} covered pixel(s)")]
    FidelityViolation { count: usize },
    #[error("invalid render job: {0}")]
    InvalidJob(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Edit(#[from] EditError),
}

/// One reference view as sent to the backend.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub view_id: String,
    pub camera: Camera,
    /// Input image with hole pixels set to zero.
    pub rgb: RgbImage,
    /// `true` where pixels were blanked because their content was removed.
    pub hole_mask: Grid<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderJob {
    pub job_id: String,
    pub camera: Camera,
    pub splat: SplatOptions,
    pub projection: ProjectionResult,
    pub references: Vec<Reference>,
    pub edits: Vec<EditOp>,
    pub removed_points: usize,
}

impl RenderJob {
    pub fn validate(&self) -> Result<(), RenderError> {
        let dims = self.camera.intrinsics.dims();
        if self.projection.dims() != dims {
            return Err(RenderError::InvalidJob("projection does not match target camera".into()));
        }
        self.projection.validate().map_err(RenderError::InvalidJob)?;
        if self.references.is_empty() {
            return Err(RenderError::InvalidJob("no reference views".into()));
        }
        for r in &self.references {
            let d = r.camera.intrinsics.dims();
            if (r.rgb.width() as usize, r.rgb.height() as usize) != d || r.hole_mask.dims() != d {
                return Err(RenderError::InvalidJob(format!("reference {} does not match its camera", r.view_id)));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> JobManifest {
        JobManifest {
            job_id: self.job_id.clone(),
            camera: CameraFile::from_camera(&self.camera),
            splat_radius: self.splat.splat_radius,
            z_epsilon: self.splat.z_epsilon,
            files: ProjectionFiles::default(),
            references: self
                .references
                .iter()
                .map(|r| ReferenceEntry {
                    view_id: r.view_id.clone(),
                    camera: CameraFile::from_camera(&r.camera),
                    rgb: format!("refs/{}.png", r.view_id),
                    mask: format!("refs/{}_mask.png", r.view_id),
                    hole_pixels: r.hole_mask.count_true(),
                })
                .collect(),
            edits: EditSummary {
                ops: self.edits.clone(),
                removed_points: self.removed_points,
            },
            hints: BackendHints {
                covered_pixels: self.projection.covered_count(),
                references_zeroed: self.references.iter().any(|r| r.hole_mask.iter().any(|&b| b)),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFiles {
    pub rgb: String,
    pub mask: String,
    pub depth: String,
    pub instance: String,
}

impl Default for ProjectionFiles {
    fn default() -> Self {
        Self {
            rgb: "proj_rgb.png".into(),
            mask: "proj_mask.png".into(),
            depth: "proj_depth.f32".into(),
            instance: "proj_instance.i32".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub view_id: String,
    pub camera: CameraFile,
    pub rgb: String,
    pub mask: String,
    pub hole_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub ops: Vec<EditOp>,
    pub removed_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendHints {
    pub covered_pixels: usize,
    pub references_zeroed: bool,
}

/// `manifest.json` of a job directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: String,
    pub camera: CameraFile,
    pub splat_radius: u32,
    pub z_epsilon: f64,
    pub files: ProjectionFiles,
    pub references: Vec<ReferenceEntry>,
    pub edits: EditSummary,
    pub hints: BackendHints,
}

/// Projects alive points into `target` and prepares the reference set. When
/// the log contains removals, reference pixels covered by removed geometry
/// are zeroed and flagged in the hole masks.
pub fn build_render_job(
    job_id: &str,
    cloud: &ScenePointCloud,
    target: &Camera,
    frames: &[ViewFrame],
    edit_log: &EditLog,
    opts: &SplatOptions,
) -> Result<RenderJob, RenderError> {
    if cloud.alive_count() == 0 {
        return Err(RenderError::EmptyCloud);
    }
    opts.validate().map_err(RenderError::InvalidJob)?;
    target.intrinsics.validate().map_err(RenderError::InvalidJob)?;
    target.pose.validate().map_err(RenderError::InvalidJob)?;
    let projection = project_points(cloud, &target.intrinsics, &target.pose, opts, true);
    let removed = edit_log.all_removed();
    let masks = if removed.is_empty() {
        frames.iter().map(|f| Grid::new(f.dims().0, f.dims().1, false)).collect()
    } else {
        reference_masks(&removed, cloud, frames, opts.splat_radius)?
    };
    let references = frames
        .iter()
        .zip(masks)
        .map(|(f, hole_mask)| {
            let mut rgb = f.rgb.clone();
            for (u, v, &hole) in hole_mask.indexed() {
                if hole {
                    rgb.put_pixel(u as u32, v as u32, image::Rgb([0, 0, 0]));
                }
            }
            Reference {
                view_id: f.view_id.clone(),
                camera: f.camera(),
                rgb,
                hole_mask,
            }
        })
        .collect();
    let job = RenderJob {
        job_id: job_id.to_string(),
        camera: *target,
        splat: *opts,
        projection,
        references,
        edits: edit_log.ops.clone(),
        removed_points: removed.len(),
    };
    job.validate()?;
    Ok(job)
}

/// Writes the job directory: `manifest.json`, the projection buffers and `refs/`.
pub fn write_job(dir: &Path, job: &RenderJob) -> Result<(), RenderError> {
    job.projection.save(dir)?;
    for r in &job.references {
        save_rgb_png(&dir.join("refs").join(format!("{}.png", r.view_id)), &r.rgb)?;
        save_mask_png(&dir.join("refs").join(format!("{}_mask.png", r.view_id)), &r.hole_mask)?;
    }
    write_json(&dir.join("manifest.json"), &job.manifest())?;
    Ok(())
}

pub fn read_job(dir: &Path) -> Result<RenderJob, RenderError> {
    let m: JobManifest = read_json(&dir.join("manifest.json"))?;
    let bad = |reason: String| SceneError::BadCamera {
        view: dir.display().to_string(),
        reason,
    };
    let camera = m.camera.to_camera().map_err(bad)?;
    let projection = ProjectionResult::load(dir)?;
    let mut references = Vec::with_capacity(m.references.len());
    for r in &m.references {
        references.push(Reference {
            view_id: r.view_id.clone(),
            camera: r.camera.to_camera().map_err(bad)?,
            rgb: load_rgb_png(&dir.join(&r.rgb))?,
            hole_mask: load_mask_png(&dir.join(&r.mask))?,
        });
    }
    let job = RenderJob {
        job_id: m.job_id,
        camera,
        splat: SplatOptions {
            splat_radius: m.splat_radius,
            z_epsilon: m.z_epsilon,
        },
        projection,
        references,
        edits: m.edits.ops,
        removed_points: m.edits.removed_points,
    };
    job.validate()?;
    Ok(job)
}

/// An inpainting service that completes a sparse projection.
pub trait RenderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn supports_reference_masks(&self) -> bool;
    /// Whether covered pixels are guaranteed to come back unchanged.
    fn exact_fidelity(&self) -> bool;
    fn inpaint(&self, job: &RenderJob) -> Result<RgbImage, RenderError>;
}

/// Runs the backend and checks its output against the job.
pub fn dispatch(job: &RenderJob, backend: &dyn RenderBackend) -> Result<RgbImage, RenderError> {
    let img = backend.inpaint(job)?;
    let (w, h) = job.projection.dims();
    if (img.width() as usize, img.height() as usize) != (w, h) {
        return Err(RenderError::BadResponse(format!(
            "image is {}x{}, job is {w}x{h}",
            img.width(),
            img.height()
        )));
    }
    if backend.exact_fidelity() {
        let count = covered_mismatches(&job.projection, &img);
        if count > 0 {
            return Err(RenderError::FidelityViolation { count });
        }
    }
    Ok(img)
}

/// Number of covered pixels whose color differs from the projection.
pub fn covered_mismatches(projection: &ProjectionResult, img: &RgbImage) -> usize {
    projection
        .coverage
        .indexed()
        .filter(|&(u, v, &c)| c && img.get_pixel(u as u32, v as u32) != projection.rgb.get_pixel(u as u32, v as u32))
        .count()
}
