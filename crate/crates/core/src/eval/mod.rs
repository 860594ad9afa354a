//! Evaluation: test-pose alignment, depth, instance and image metrics.

mod ap;
mod depth;
mod image_metrics;
mod pose;

pub use ap::{instance_ap, InstanceApResult, ThresholdResult, AP_THRESHOLDS};
pub use depth::{depth_metrics, DepthMetrics};
pub use image_metrics::{image_metrics, psnr, ssim, ImageMetrics, PSNR_CAP};
pub use pose::{align_poses, align_poses_with, SimilarityTransform};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 3 pose pairs, got {0}")]
    TooFewPoses(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no pixel has valid depth in both maps")]
    NoValidPixels,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
