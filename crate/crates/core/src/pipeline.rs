//! Stage runners shared by the CLI and the service.

use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{apply_report, consistency_masks, filter_cloud, AnomalyError, ConsistencyReport, FilterConfig};
use crate::config::{BackendConfig, BackendKind};
use crate::edit::EditError;
use crate::eval::{
    align_poses_with, depth_metrics, image_metrics, instance_ap, DepthMetrics, EvalError, ImageMetrics,
    InstanceApResult, SimilarityTransform,
};
use crate::instance::{label_cloud, lift_masks, unify_instances, InstanceError, PointGroup, UnifyConfig};
use crate::render::{BaselineBackend, ExternalBackend, ExternalOptions, RenderBackend, RenderError};
use crate::scene::{
    assemble_point_cloud, unproject_all, Camera, InstanceMask2D, PointMap, SceneBundle, SceneError, ScenePointCloud,
};
use crate::synth::GroundTruth;
use crate::Grid;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Coarse failure class, used for exit codes and HTTP statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureClass {
    Validation,
    Io,
    Backend,
}

fn scene_class(e: &SceneError) -> FailureClass {
    match e {
        SceneError::Io { .. } | SceneError::MissingFile(_) => FailureClass::Io,
        _ => FailureClass::Validation,
    }
}

impl PipelineError {
    pub fn class(&self) -> FailureClass {
        match self {
            Self::Scene(e) | Self::Render(RenderError::Scene(e)) => scene_class(e),
            Self::Render(
                RenderError::BackendUnavailable { .. }
                | RenderError::BadResponse(_)
                | RenderError::FidelityViolation { .. }
                | RenderError::Config(_),
            ) => FailureClass::Backend,
            _ => FailureClass::Validation,
        }
    }

    /// Stable snake_case identifier for machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Scene(SceneError::MissingFile(_)) => "missing_file",
            Self::Scene(SceneError::Io { .. }) => "io_error",
            Self::Scene(SceneError::BadCamera { .. }) => "bad_camera",
            Self::Scene(SceneError::Format { .. }) => "malformed_file",
            Self::Scene(_) => "invalid_scene",
            Self::Anomaly(_) => "filter_error",
            Self::Instance(_) => "segment_error",
            Self::Edit(EditError::UnknownInstance(_)) => "unknown_instance",
            Self::Edit(_) => "invalid_edit",
            Self::Render(RenderError::BackendUnavailable { .. }) => "backend_unavailable",
            Self::Render(RenderError::BadResponse(_)) => "bad_response",
            Self::Render(RenderError::FidelityViolation { .. }) => "fidelity_violation",
            Self::Render(RenderError::Config(_)) => "backend_config",
            Self::Render(RenderError::EmptyCloud) => "empty_cloud",
            Self::Render(RenderError::Scene(SceneError::Io { .. } | SceneError::MissingFile(_))) => "io_error",
            Self::Render(_) => "invalid_job",
            Self::Eval(_) => "eval_error",
            Self::Config(_) => "invalid_config",
        }
    }
}

/// Output of the consistency filter.
pub struct Filtered {
    pub pointmaps: Vec<PointMap>,
    /// Pointmaps with flagged pixels invalidated.
    pub kept: Vec<PointMap>,
    pub report: ConsistencyReport,
    /// Surviving points, in assembly order.
    pub cloud: ScenePointCloud,
}

pub fn run_filter(bundle: &SceneBundle, cfg: &FilterConfig) -> Result<Filtered, PipelineError> {
    let pointmaps = unproject_all(&bundle.frames);
    let report = consistency_masks(&pointmaps, &bundle.frames, cfg)?;
    let kept = apply_report(&pointmaps, &report)?;
    let cloud = filter_cloud(&assemble_point_cloud(&pointmaps, &bundle.frames)?, &report)?;
    Ok(Filtered {
        pointmaps,
        kept,
        report,
        cloud,
    })
}

/// Rebuilds the filter output from saved per-view validity masks.
pub fn refilter(bundle: &SceneBundle, report: ConsistencyReport) -> Result<Filtered, PipelineError> {
    let pointmaps = unproject_all(&bundle.frames);
    let kept = apply_report(&pointmaps, &report)?;
    let cloud = filter_cloud(&assemble_point_cloud(&pointmaps, &bundle.frames)?, &report)?;
    Ok(Filtered {
        pointmaps,
        kept,
        report,
        cloud,
    })
}

pub struct Segmented {
    pub groups: Vec<PointGroup>,
    /// The filtered cloud with `instance_id` set from `groups`.
    pub cloud: ScenePointCloud,
}

/// Lifts `masks` (the bundle's own masks when `None`) and unifies them.
pub fn run_segment(
    bundle: &SceneBundle,
    filtered: &Filtered,
    masks: Option<&[InstanceMask2D]>,
    cfg: &UnifyConfig,
) -> Result<Segmented, PipelineError> {
    let own: Vec<InstanceMask2D>;
    let masks = match masks {
        Some(m) => m,
        None => {
            own = bundle.frames.iter().filter_map(|f| f.masks.clone()).collect();
            &own
        }
    };
    let lifted = lift_masks(masks, &filtered.kept, &filtered.cloud, cfg.min_group_points)?;
    let groups = unify_instances(&lifted, &filtered.cloud, &bundle.frames, cfg)?;
    let cloud = label_cloud(&filtered.cloud, &groups)?;
    Ok(Segmented { groups, cloud })
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn RenderBackend>, RenderError> {
    match cfg.kind {
        BackendKind::Baseline => Ok(Box::new(BaselineBackend)),
        BackendKind::External => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| RenderError::Config("external backend needs an endpoint".into()))?;
            let opts = ExternalOptions {
                timeout: Duration::from_secs(cfg.timeout_secs),
                attempts: cfg.attempts,
                max_concurrency: cfg.max_concurrency,
                ..ExternalOptions::new(endpoint)
            };
            Ok(Box::new(ExternalBackend::new(opts)?))
        }
    }
}

/// Ground-truth test cameras mapped into the bundle's frame through the
/// similarity fitted on the training cameras.
pub fn aligned_test_cameras(
    bundle: &SceneBundle,
    gt: &GroundTruth,
    estimate_scale: bool,
) -> Result<(SimilarityTransform, Vec<(String, Camera)>), PipelineError> {
    let (pred, truth) = paired_poses(bundle, gt)?;
    let sim = align_poses_with(&pred, &truth, estimate_scale)?;
    let cams = gt
        .test_views
        .iter()
        .map(|t| (t.view_id.clone(), Camera::new(t.camera.intrinsics, sim.map_pose(&t.camera.pose))))
        .collect();
    Ok((sim, cams))
}

fn paired_poses(
    bundle: &SceneBundle,
    gt: &GroundTruth,
) -> Result<(Vec<crate::CameraPose>, Vec<crate::CameraPose>), PipelineError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (id, cam) in gt.view_ids.iter().zip(&gt.cameras) {
        let frame = bundle
            .frame(id)
            .ok_or_else(|| SceneError::InvalidBundle(format!("ground-truth view {id} not in bundle")))?;
        pred.push(frame.pose);
        truth.push(cam.pose);
    }
    Ok((pred, truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDepth {
    pub view_id: String,
    #[serde(flatten)]
    pub metrics: DepthMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthBlock {
    pub frames: Vec<FrameDepth>,
    /// Unweighted means over frames.
    pub mean_rmse: f64,
    pub mean_delta_125: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseBlock {
    pub transform: SimilarityTransform,
    pub rms_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestViewMetrics {
    pub view_id: String,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

/// `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub depth: DepthBlock,
    /// Depth with filtered-out pixels excluded; absent without validity masks.
    pub depth_filtered: Option<DepthBlock>,
    pub instances: Option<InstanceApResult>,
    pub pose: PoseBlock,
    pub test_views: Vec<TestViewMetrics>,
}

pub struct EvalInputs<'a> {
    pub bundle: &'a SceneBundle,
    pub gt: &'a GroundTruth,
    /// Per-view validity masks in bundle frame order.
    pub valid: Option<&'a [Grid<bool>]>,
    pub labeled: Option<&'a ScenePointCloud>,
    /// Rendered test views by id.
    pub renders: &'a [(String, RgbImage)],
    pub scale_align: bool,
    pub pose_scale: bool,
}

fn depth_block(
    bundle: &SceneBundle,
    gt: &GroundTruth,
    valid: Option<&[Grid<bool>]>,
    scale_align: bool,
) -> Result<DepthBlock, PipelineError> {
    let mut frames = Vec::new();
    for (slot, frame) in bundle.frames.iter().enumerate() {
        let Some(g) = gt.view_ids.iter().position(|v| *v == frame.view_id) else {
            continue;
        };
        let pred = match valid {
            Some(masks) => {
                let m = &masks[slot];
                Grid::from_fn(m.width(), m.height(), |u, v| {
                    if *m.get(u, v) {
                        *frame.depth.get(u, v)
                    } else {
                        0.0
                    }
                })
            }
            None => frame.depth.clone(),
        };
        frames.push(FrameDepth {
            view_id: frame.view_id.clone(),
            metrics: depth_metrics(&pred, &gt.true_depth[g], scale_align)?,
        });
    }
    let n = frames.len().max(1) as f64;
    Ok(DepthBlock {
        mean_rmse: frames.iter().map(|f| f.metrics.rmse).sum::<f64>() / n,
        mean_delta_125: frames.iter().map(|f| f.metrics.delta_125).sum::<f64>() / n,
        frames,
    })
}

pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<EvalReport, PipelineError> {
    let (bundle, gt) = (inputs.bundle, inputs.gt);
    let depth = depth_block(bundle, gt, None, inputs.scale_align)?;
    let depth_filtered = inputs
        .valid
        .map(|v| depth_block(bundle, gt, Some(v), inputs.scale_align))
        .transpose()?;
    let instances = inputs
        .labeled
        .map(|cloud| -> Result<_, PipelineError> {
            let labels = gt.point_labels(cloud)?;
            Ok(instance_ap(&cloud.instance_id, &labels)?)
        })
        .transpose()?;
    let (pred, truth) = paired_poses(bundle, gt)?;
    let transform = align_poses_with(&pred, &truth, inputs.pose_scale)?;
    let pose = PoseBlock {
        rms_residual: transform.rms_residual(&pred, &truth),
        transform,
    };
    let mut test_views = Vec::new();
    for t in &gt.test_views {
        if let Some((_, img)) = inputs.renders.iter().find(|(id, _)| *id == t.view_id) {
            test_views.push(TestViewMetrics {
                view_id: t.view_id.clone(),
                metrics: image_metrics(img, &t.rgb)?,
            });
        }
    }
    Ok(EvalReport {
        depth,
        depth_filtered,
        instances,
        pose,
        test_views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn filter_segment_evaluate_clean_scene() {
        let s = generate(&SynthConfig {
            views: 4,
            width: 96,
            height: 72,
            focal: 60.0,
            ..Default::default()
        });
        let f = run_filter(&s.bundle, &FilterConfig::default()).unwrap();
        assert_eq!(f.report.total_flagged(), 0);
        let seg = run_segment(&s.bundle, &f, None, &UnifyConfig::default()).unwrap();
        let report = evaluate(&EvalInputs {
            bundle: &s.bundle,
            gt: &s.gt,
            valid: Some(&f.report.masks),
            labeled: Some(&seg.cloud),
            renders: &[(s.gt.test_views[0].view_id.clone(), s.gt.test_views[0].rgb.clone())],
            scale_align: true,
            pose_scale: true,
        })
        .unwrap();
        assert_eq!(report.depth.mean_rmse, 0.0);
        assert_eq!(report.depth.mean_delta_125, 1.0);
        assert!(report.pose.rms_residual < 1e-9);
        assert!((report.pose.transform.scale - 1.0).abs() < 1e-9);
        assert_eq!(report.test_views.len(), 1);
        assert_eq!(report.test_views[0].metrics.psnr, crate::eval::PSNR_CAP);
        assert!(report.instances.is_some());
    }

    #[test]
    fn aligned_cameras_follow_a_moved_bundle() {
        use nalgebra::{Rotation3, Vector3};
        let mut s = generate(&SynthConfig {
            views: 4,
            width: 32,
            height: 24,
            focal: 20.0,
            ..Default::default()
        });
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4).into_inner();
        let shift = Vector3::new(1.0, -2.0, 0.5);
        for f in &mut s.bundle.frames {
            f.pose.rotation = rot * f.pose.rotation;
            f.pose.translation = rot * f.pose.translation + shift;
        }
        let (sim, cams) = aligned_test_cameras(&s.bundle, &s.gt, false).unwrap();
        assert!((sim.rotation - rot).norm() < 1e-9);
        let t = &s.gt.test_views[0].camera.pose;
        let expect = rot * t.translation + shift;
        assert!((cams[0].1.pose.translation - expect).norm() < 1e-9);
    }

    #[test]
    fn failure_classes() {
        assert_eq!(
            PipelineError::from(RenderError::Config("x".into())).class(),
            FailureClass::Backend
        );
        assert_eq!(
            PipelineError::from(SceneError::MissingFile("a".into())).class(),
            FailureClass::Io
        );
        assert_eq!(PipelineError::Config("x".into()).class(), FailureClass::Validation);
        let no_endpoint = make_backend(&BackendConfig {
            kind: BackendKind::External,
            ..Default::default()
        });
        assert!(matches!(no_endpoint, Err(RenderError::Config(_))));
    }
}
