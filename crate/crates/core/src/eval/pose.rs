use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::scene::CameraPose;

/// Relative size of the second singular value below which a point set counts as collinear.
const DEGENERATE_RATIO: f64 = 1e-9;

/// `p' = s · R · p + t`, mapping ground-truth coordinates into the predicted frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Maps a ground-truth camera pose: center through the transform, rotation `R · R_gt`.
    pub fn map_pose(&self, pose: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.center()),
        }
    }

    /// Root-mean-square distance between mapped `gt` centers and `pred` centers.
    pub fn rms_residual(&self, pred: &[CameraPose], gt: &[CameraPose]) -> f64 {
        let n = pred.len().min(gt.len());
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = pred
            .iter()
            .zip(gt)
            .map(|(p, g)| (self.apply(&g.center()) - p.center()).norm_squared())
            .sum();
        (sum / n as f64).sqrt()
    }
}

/// Least-squares similarity aligning ground-truth camera centers to predicted ones.
pub fn align_poses(pred: &[CameraPose], gt: &[CameraPose]) -> Result<SimilarityTransform, EvalError> {
    align_poses_with(pred, gt, true)
}

/// As [`align_poses`]; with `estimate_scale = false` the scale is fixed to 1 (rigid fit).
pub fn align_poses_with(
    pred: &[CameraPose],
    gt: &[CameraPose],
    estimate_scale: bool,
) -> Result<SimilarityTransform, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.len() < 3 {
        return Err(EvalError::TooFewPoses(pred.len()));
    }
    let n = pred.len() as f64;
    let x: Vec<Vector3<f64>> = gt.iter().map(|p| p.center()).collect();
    let y: Vec<Vector3<f64>> = pred.iter().map(|p| p.center()).collect();
    let mu_x = x.iter().sum::<Vector3<f64>>() / n;
    let mu_y = y.iter().sum::<Vector3<f64>>() / n;

    check_spread(&x, &mu_x, "ground-truth")?;
    check_spread(&y, &mu_y, "predicted")?;

    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (xi, yi) in x.iter().zip(&y) {
        let (dx, dy) = (xi - mu_x, yi - mu_y);
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = if estimate_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(EvalError::DegenerateConfiguration(format!("non-positive scale {scale}")));
    }
    let translation = mu_y - scale * rotation * mu_x;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn check_spread(pts: &[Vector3<f64>], mean: &Vector3<f64>, which: &str) -> Result<(), EvalError> {
    let mut scatter = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    let sv = scatter.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] <= f64::EPSILON || sorted[1] <= DEGENERATE_RATIO * sorted[0] {
        return Err(EvalError::DegenerateConfiguration(format!(
            "{which} camera centers are collinear or coincident"
        )));
    }
    Ok(())
}
