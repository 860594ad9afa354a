//! Multi-view depth-consistency filtering.
//!
//! Each valid point of view `i` is projected into every other view `j`. When it
//! lands in bounds on a pixel with positive native depth `Z_j(u, v)`, the
//! observation is *tested*; it is a *violation* when the point's own depth in
//! camera `j` is below `tau · Z_j(u, v)`, i.e. the point floats in front of the
//! surface that view `j` sees. The test is deliberately one-sided: points
//! behind the observed surface (occlusions) never count against themselves.
//!
//! Points are compared individually rather than through a rasterized warp
//! buffer, so a floater cannot hide a genuine surface point sharing its pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::scene::{PointMap, ScenePointCloud, ViewFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnomalyError {
    #[error("consistency filtering needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("pointmaps and frames are not aligned: {0}")]
    Misaligned(String),
    #[error("report does not match cloud sources: {0}")]
    SourceMismatch(String),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Ratio below which a point is judged to float in front of a surface.
    pub tau: f64,
    /// Number of violating views needed to flag a point.
    pub min_violations: u32,
    /// Points with fewer in-bounds observations are kept unconditionally.
    pub min_observations: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 0.75,
            min_violations: 1,
            min_observations: 1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(AnomalyError::InvalidConfig(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.min_violations < 1 || self.min_observations < 1 {
            return Err(AnomalyError::InvalidConfig(
                "min_violations and min_observations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The single-observation test.
#[inline]
pub fn is_violation(warped_depth: f64, native_depth: f64, tau: f64) -> bool {
    warped_depth < tau * native_depth
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewCounts {
    pub view_id: String,
    /// Valid points before filtering.
    pub valid: usize,
    /// Points with at least `min_observations` in-bounds observations.
    pub tested: usize,
    /// Points with at least one violating observation.
    pub violated: usize,
    /// Points removed.
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub view_ids: Vec<String>,
    /// Per-view validity: depth-valid and not flagged.
    pub masks: Vec<Grid<bool>>,
    pub counts: Vec<ViewCounts>,
    pub pairs_evaluated: usize,
}

/// JSON form written as `consistency_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub tau: f64,
    pub min_violations: u32,
    pub min_observations: u32,
    pub pairs_evaluated: usize,
    pub total_valid: usize,
    pub total_flagged: usize,
    pub views: Vec<ViewCounts>,
}

impl ConsistencyReport {
    pub fn total_flagged(&self) -> usize {
        self.counts.iter().map(|c| c.flagged).sum()
    }

    pub fn mask(&self, view_id: &str) -> Option<&Grid<bool>> {
        self.view_ids.iter().position(|v| v == view_id).map(|i| &self.masks[i])
    }

    pub fn summary(&self, cfg: &FilterConfig) -> ConsistencySummary {
        ConsistencySummary {
            tau: cfg.tau,
            min_violations: cfg.min_violations,
            min_observations: cfg.min_observations,
            pairs_evaluated: self.pairs_evaluated,
            total_valid: self.counts.iter().map(|c| c.valid).sum(),
            total_flagged: self.total_flagged(),
            views: self.counts.clone(),
        }
    }

    /// Rebuilds a report from per-view masks, e.g. ones read back from disk.
    pub fn from_masks(view_ids: Vec<String>, masks: Vec<Grid<bool>>) -> Self {
        let counts = view_ids
            .iter()
            .zip(&masks)
            .map(|(id, m)| ViewCounts {
                view_id: id.clone(),
                valid: m.count_true(),
                tested: 0,
                violated: 0,
                flagged: 0,
            })
            .collect();
        Self {
            view_ids,
            masks,
            counts,
            pairs_evaluated: 0,
        }
    }
}

/// Per-point observation and violation counts for one source view.
#[derive(Clone, Debug, PartialEq)]
pub struct PointVotes {
    pub observations: Grid<u32>,
    pub violations: Grid<u32>,
}

/// Counts, for every valid pixel of `pointmaps[source]`, how many other views
/// observe it and how many of those observations violate the test.
pub fn point_votes(source: usize, pointmaps: &[PointMap], frames: &[ViewFrame], tau: f64) -> PointVotes {
    let pm = &pointmaps[source];
    let (w, h) = pm.dims();
    let mut observations = Grid::new(w, h, 0u32);
    let mut violations = Grid::new(w, h, 0u32);
    let targets: Vec<(usize, crate::scene::Camera)> = frames
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != source)
        .map(|(j, f)| (j, f.camera()))
        .collect();
    for (idx, (&ok, p)) in pm.valid.iter().zip(pm.points.iter()).enumerate() {
        if !ok {
            continue;
        }
        let (mut obs, mut viol) = (0u32, 0u32);
        for (j, cam) in &targets {
            let Some((u, v, z)) = cam.project_to_pixel(p) else { continue };
            let native = *frames[*j].depth.get(u, v) as f64;
            if native <= 0.0 {
                continue;
            }
            obs += 1;
            if is_violation(z, native, tau) {
                viol += 1;
            }
        }
        observations.as_mut_slice()[idx] = obs;
        violations.as_mut_slice()[idx] = viol;
    }
    PointVotes {
        observations,
        violations,
    }
}

/// Runs the all-pairs consistency test and builds per-view validity masks.
pub fn consistency_masks(
    pointmaps: &[PointMap],
    frames: &[ViewFrame],
    cfg: &FilterConfig,
) -> Result<ConsistencyReport, AnomalyError> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(AnomalyError::TooFewViews(frames.len()));
    }
    if pointmaps.len() != frames.len() {
        return Err(AnomalyError::Misaligned(format!(
            "{} pointmaps for {} frames",
            pointmaps.len(),
            frames.len()
        )));
    }
    for (pm, f) in pointmaps.iter().zip(frames) {
        if pm.view_id != f.view_id || pm.dims() != f.dims() {
            return Err(AnomalyError::Misaligned(format!("{} vs {}", pm.view_id, f.view_id)));
        }
    }

    let per_view: Vec<(Grid<bool>, ViewCounts)> = (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let votes = point_votes(i, pointmaps, frames, cfg.tau);
            let pm = &pointmaps[i];
            let mut counts = ViewCounts {
                view_id: pm.view_id.clone(),
                valid: 0,
                tested: 0,
                violated: 0,
                flagged: 0,
            };
            let mask = Grid::from_fn(pm.dims().0, pm.dims().1, |u, v| {
                if !*pm.valid.get(u, v) {
                    return false;
                }
                counts.valid += 1;
                let obs = *votes.observations.get(u, v);
                let viol = *votes.violations.get(u, v);
                if viol > 0 {
                    counts.violated += 1;
                }
                if obs < cfg.min_observations {
                    return true;
                }
                counts.tested += 1;
                if viol >= cfg.min_violations {
                    counts.flagged += 1;
                    false
                } else {
                    true
                }
            });
            (mask, counts)
        })
        .collect();

    let n = frames.len();
    let (masks, counts) = per_view.into_iter().unzip();
    Ok(ConsistencyReport {
        view_ids: frames.iter().map(|f| f.view_id.clone()).collect(),
        masks,
        counts,
        pairs_evaluated: n * (n - 1),
    })
}

/// Keeps exactly the points whose source pixel is valid in the report, in order.
pub fn filter_cloud(cloud: &ScenePointCloud, report: &ConsistencyReport) -> Result<ScenePointCloud, AnomalyError> {
    let lookup: Vec<&Grid<bool>> = cloud
        .views
        .iter()
        .map(|v| {
            report
                .mask(v)
                .ok_or_else(|| AnomalyError::SourceMismatch(format!("no mask for view {v}")))
        })
        .collect::<Result<_, _>>()?;
    let mut out = ScenePointCloud::empty(cloud.views.clone());
    for i in 0..cloud.len() {
        let s = cloud.source[i];
        let mask = lookup[s.view as usize];
        if s.u as usize >= mask.width() || s.v as usize >= mask.height() {
            return Err(AnomalyError::SourceMismatch(format!(
                "source pixel ({}, {}) outside {}x{} mask of {}",
                s.u,
                s.v,
                mask.width(),
                mask.height(),
                cloud.views[s.view as usize]
            )));
        }
        if *mask.get(s.u as usize, s.v as usize) {
            out.positions.push(cloud.positions[i]);
            out.colors.push(cloud.colors[i]);
            out.source.push(s);
            out.instance_id.push(cloud.instance_id[i]);
            out.alive.push(cloud.alive[i]);
        }
    }
    Ok(out)
}

/// Applies the report's masks to the pointmaps (used before instance lifting).
pub fn apply_report(pointmaps: &[PointMap], report: &ConsistencyReport) -> Result<Vec<PointMap>, AnomalyError> {
    pointmaps
        .iter()
        .map(|pm| {
            let mask = report
                .mask(&pm.view_id)
                .ok_or_else(|| AnomalyError::SourceMismatch(format!("no mask for view {}", pm.view_id)))?;
            pm.masked(mask)
                .map_err(|e| AnomalyError::SourceMismatch(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{assemble_point_cloud, unproject, CameraIntrinsics, CameraPose};
    use image::RgbImage;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn one_sided_test() {
        assert!(is_violation(1.0, 2.0, 0.75));
        assert!(!is_violation(2.5, 2.0, 0.75));
        assert!(!is_violation(1.5, 2.0, 0.75));
    }

    /// Two fronto-parallel 8×8 cameras 0.1 m apart looking at a wall at z = 2.
    fn two_views(floater: Option<(usize, usize)>) -> Vec<ViewFrame> {
        let k = CameraIntrinsics {
            fx: 8.0,
            fy: 8.0,
            cx: 3.5,
            cy: 3.5,
            width: 8,
            height: 8,
        };
        (0..2)
            .map(|i| {
                let mut depth = Grid::new(8, 8, 2.0f32);
                if i == 0 {
                    if let Some((u, v)) = floater {
                        depth.set(u, v, 0.8);
                    }
                }
                ViewFrame {
                    view_id: format!("v{i:02}"),
                    rgb: RgbImage::new(8, 8),
                    depth,
                    intrinsics: k,
                    pose: CameraPose::new(Matrix3::identity(), Vector3::new(0.1 * i as f64, 0.0, 0.0)).unwrap(),
                    masks: None,
                }
            })
            .collect()
    }

    #[test]
    fn wall_is_clean_and_floater_is_flagged() {
        let frames = two_views(None);
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let rep = consistency_masks(&pms, &frames, &FilterConfig::default()).unwrap();
        assert_eq!(rep.total_flagged(), 0);
        assert_eq!(rep.pairs_evaluated, 2);

        let frames = two_views(Some((4, 4)));
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let rep = consistency_masks(&pms, &frames, &FilterConfig::default()).unwrap();
        assert_eq!(rep.total_flagged(), 1);
        assert!(!*rep.masks[0].get(4, 4));
        assert!(rep.counts.iter().all(|c| c.flagged <= c.tested));

        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let filtered = filter_cloud(&cloud, &rep).unwrap();
        assert_eq!(filtered.len(), cloud.len() - 1);
        assert_eq!(filter_cloud(&filtered, &rep).unwrap(), filtered);
    }

    #[test]
    fn quorum_and_observation_gates() {
        let frames = two_views(Some((4, 4)));
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let strict = FilterConfig {
            min_violations: 2,
            ..FilterConfig::default()
        };
        assert_eq!(consistency_masks(&pms, &frames, &strict).unwrap().total_flagged(), 0);
        let needs_two = FilterConfig {
            min_observations: 2,
            ..FilterConfig::default()
        };
        let rep = consistency_masks(&pms, &frames, &needs_two).unwrap();
        assert_eq!(rep.total_flagged(), 0);
        assert_eq!(rep.counts[0].tested, 0);
    }

    #[test]
    fn zero_native_depth_is_skipped() {
        let mut frames = two_views(Some((4, 4)));
        frames[1].depth = Grid::new(8, 8, 0.0);
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let rep = consistency_masks(&pms, &frames, &FilterConfig::default()).unwrap();
        assert_eq!(rep.total_flagged(), 0);
        assert_eq!(rep.counts[0].tested, 0);
    }

    #[test]
    fn errors() {
        let frames = two_views(None);
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        assert_eq!(
            consistency_masks(&pms[..1], &frames[..1], &FilterConfig::default()).unwrap_err(),
            AnomalyError::TooFewViews(1)
        );
        let bad = FilterConfig {
            tau: 1.0,
            ..FilterConfig::default()
        };
        assert!(consistency_masks(&pms, &frames, &bad).is_err());

        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let rep = ConsistencyReport::from_masks(vec!["v00".into()], vec![Grid::new(8, 8, true)]);
        assert!(matches!(filter_cloud(&cloud, &rep), Err(AnomalyError::SourceMismatch(_))));
    }

    #[test]
    fn filter_cloud_set_difference() {
        let frames = two_views(None);
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let all = ConsistencyReport::from_masks(
            vec!["v00".into(), "v01".into()],
            vec![Grid::new(8, 8, true), Grid::new(8, 8, true)],
        );
        assert_eq!(filter_cloud(&cloud, &all).unwrap(), cloud);
        let drop_second = ConsistencyReport::from_masks(
            vec!["v00".into(), "v01".into()],
            vec![Grid::new(8, 8, true), Grid::new(8, 8, false)],
        );
        let out = filter_cloud(&cloud, &drop_second).unwrap();
        assert_eq!(out.len(), 64);
        assert!(out.source.iter().all(|s| s.view == 0));

        let mut m = Grid::new(8, 8, true);
        m.set(0, 0, false);
        m.set(5, 1, false);
        m.set(7, 7, false);
        let three = ConsistencyReport::from_masks(vec!["v00".into(), "v01".into()], vec![m, Grid::new(8, 8, true)]);
        let out = filter_cloud(&cloud, &three).unwrap();
        assert_eq!(out.len(), 128 - 3);
        assert!(out.source.windows(2).all(|w| (w[0].view, w[0].v, w[0].u) < (w[1].view, w[1].v, w[1].u)));
    }
}
