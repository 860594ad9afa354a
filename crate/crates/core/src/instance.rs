//! 2D-to-3D instance lifting and cross-view unification.
//!
//! Every 2D mask of every view becomes a point group (the cloud points behind
//! its valid pixels). Groups are then projected into the other views, closed
//! morphologically, and compared with the native masks there; any pair whose
//! IoU exceeds `eta` is merged. Passes repeat on the merged groups until a
//! whole pass performs no merge.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::projection::footprint_mask;
use crate::scene::{Camera, InstanceMask2D, PointMap, PointSource, ScenePointCloud, ViewFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("unknown view {0}")]
    UnknownView(String),
    #[error("point {0} belongs to more than one group")]
    OverlappingGroups(u32),
    #[error("mask shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid unify config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnifyConfig {
    /// IoU threshold for merging (strictly greater merges).
    pub eta: f64,
    pub min_group_points: usize,
    pub closing_radius: u32,
}

impl Default for UnifyConfig {
    fn default() -> Self {
        Self {
            eta: 1.0 / 3.0,
            min_group_points: 20,
            closing_radius: 1,
        }
    }
}

impl UnifyConfig {
    pub fn validate(&self) -> Result<(), InstanceError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(InstanceError::InvalidConfig(format!("eta {} outside (0, 1]", self.eta)));
        }
        if self.min_group_points < 1 {
            return Err(InstanceError::InvalidConfig("min_group_points must be >= 1".into()));
        }
        Ok(())
    }
}

/// A set of cloud points forming one candidate or unified instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointGroup {
    pub group_id: usize,
    /// Sorted cloud indices.
    pub members: Vec<u32>,
    /// `(view_id, mask label)` pairs merged into this group, sorted.
    pub origin: Vec<(String, u32)>,
}

impl PointGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One point group per `(view, label ≥ 1)` with at least `min_group_points`
/// valid, alive points. Ids follow view order then ascending label.
pub fn lift_masks(
    masks: &[InstanceMask2D],
    pointmaps: &[PointMap],
    cloud: &ScenePointCloud,
    min_group_points: usize,
) -> Result<Vec<PointGroup>, InstanceError> {
    let index = cloud.source_index();
    let mut groups = Vec::new();
    for mask in masks {
        let view = cloud
            .view_index(&mask.view_id)
            .ok_or_else(|| InstanceError::UnknownView(mask.view_id.clone()))?;
        let pm = pointmaps
            .iter()
            .find(|p| p.view_id == mask.view_id)
            .ok_or_else(|| InstanceError::UnknownView(mask.view_id.clone()))?;
        if mask.labels.dims() != pm.dims() {
            return Err(InstanceError::ShapeMismatch(format!(
                "{}: mask {}x{} vs pointmap {}x{}",
                mask.view_id,
                mask.labels.width(),
                mask.labels.height(),
                pm.dims().0,
                pm.dims().1
            )));
        }
        let labels = mask.label_set();
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); labels.len()];
        for (u, v, &label) in mask.labels.indexed() {
            if label == 0 || !*pm.valid.get(u, v) {
                continue;
            }
            let src = PointSource {
                view,
                u: u as u32,
                v: v as u32,
            };
            let Some(&idx) = index.get(&src) else { continue };
            if !cloud.alive[idx as usize] {
                continue;
            }
            let slot = labels.binary_search(&label).unwrap();
            members[slot].push(idx);
        }
        for (label, mut m) in labels.into_iter().zip(members) {
            if m.len() >= min_group_points {
                m.sort_unstable();
                groups.push(PointGroup {
                    group_id: groups.len(),
                    members: m,
                    origin: vec![(mask.view_id.clone(), label)],
                });
            }
        }
    }
    Ok(groups)
}

/// Square-element dilation; out-of-image pixels count as `false`.
pub fn dilate(mask: &Grid<bool>, radius: u32) -> Grid<bool> {
    morph(mask, radius, true)
}

/// Square-element erosion; out-of-image pixels count as `true`, so that
/// closing never removes input pixels at the border.
pub fn erode(mask: &Grid<bool>, radius: u32) -> Grid<bool> {
    morph(mask, radius, false)
}

fn morph(mask: &Grid<bool>, radius: u32, dilation: bool) -> Grid<bool> {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as usize;
    let (w, h) = mask.dims();
    // separable: rows then columns
    let pass = |src: &Grid<bool>, horizontal: bool| -> Grid<bool> {
        Grid::from_fn(w, h, |u, v| {
            let (c, len) = if horizontal { (u, w) } else { (v, h) };
            let lo = c.saturating_sub(r);
            let hi = (c + r).min(len - 1);
            // skipping clipped neighbors pads with false for `any`, true for `all`
            let mut it = (lo..=hi).map(|k| if horizontal { *src.get(k, v) } else { *src.get(u, k) });
            if dilation {
                it.any(|b| b)
            } else {
                it.all(|b| b)
            }
        })
    };
    pass(&pass(mask, true), false)
}

/// Morphological closing (dilation then erosion).
pub fn close(mask: &Grid<bool>, radius: u32) -> Grid<bool> {
    erode(&dilate(mask, radius), radius)
}

/// Rasterizes a group's points into `target` without depth testing, then closes.
pub fn project_group_mask(group: &PointGroup, cloud: &ScenePointCloud, target: &Camera, closing_radius: u32) -> Grid<bool> {
    let mask = footprint_mask(
        target,
        group.members.iter().map(|&i| &cloud.positions[i as usize]),
        0,
    );
    close(&mask, closing_radius)
}

/// `|a ∧ b| / |a ∨ b|`, or 0 when both are empty.
pub fn mask_iou(a: &Grid<bool>, b: &Grid<bool>) -> Result<f64, InstanceError> {
    if !a.same_dims(b) {
        return Err(InstanceError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }

    /// Root → constituent indices, roots in order of their smallest constituent.
    fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        let mut comps: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }
}

/// Per-view native masks prepared for IoU against many projected masks.
struct NativeView {
    camera: Camera,
    labels: Grid<u32>,
    /// `(label, area, group index)` for labels that produced a group.
    regions: Vec<(u32, usize, usize)>,
}

fn merged(groups: &[PointGroup], comp: &[usize]) -> PointGroup {
    let mut members: Vec<u32> = comp.iter().flat_map(|&g| groups[g].members.iter().copied()).collect();
    members.sort_unstable();
    members.dedup();
    let origin: BTreeSet<(String, u32)> = comp.iter().flat_map(|&g| groups[g].origin.iter().cloned()).collect();
    PointGroup {
        group_id: 0,
        members,
        origin: origin.into_iter().collect(),
    }
}

/// Merges groups across views until a fixpoint; see the module docs.
///
/// A merged group is compared against every view except when all of its
/// origins come from that single view. Output ids are dense, in descending
/// member-count order.
pub fn unify_instances(
    groups: &[PointGroup],
    cloud: &ScenePointCloud,
    frames: &[ViewFrame],
    cfg: &UnifyConfig,
) -> Result<Vec<PointGroup>, InstanceError> {
    cfg.validate()?;
    let views: Vec<NativeView> = frames
        .iter()
        .map(|f| {
            let labels = f
                .masks
                .as_ref()
                .map(|m| m.labels.clone())
                .unwrap_or_else(|| Grid::new(f.dims().0, f.dims().1, 0));
            let mut regions = Vec::new();
            for (gi, g) in groups.iter().enumerate() {
                for (vid, label) in &g.origin {
                    if vid == &f.view_id {
                        let area = labels.iter().filter(|&&l| l == *label).count();
                        regions.push((*label, area, gi));
                    }
                }
            }
            regions.sort_unstable();
            NativeView {
                camera: f.camera(),
                labels,
                regions,
            }
        })
        .collect();
    for g in groups {
        for (vid, _) in &g.origin {
            if !frames.iter().any(|f| &f.view_id == vid) {
                return Err(InstanceError::UnknownView(vid.clone()));
            }
        }
    }

    let mut dsu = DisjointSet::new(groups.len());
    loop {
        let comps = dsu.components();
        let current: Vec<PointGroup> = comps.iter().map(|c| merged(groups, c)).collect();
        let work: Vec<(usize, usize)> = current
            .iter()
            .enumerate()
            .flat_map(|(ci, g)| {
                let views = &views;
                frames.iter().enumerate().filter_map(move |(j, f)| {
                    let only_this_view = g.origin.iter().all(|(vid, _)| vid == &f.view_id);
                    (!only_this_view && !views[j].regions.is_empty()).then_some((ci, j))
                })
            })
            .collect();

        let matches: Vec<(usize, usize)> = work
            .par_iter()
            .flat_map_iter(|&(ci, j)| {
                let nv = &views[j];
                let proj = project_group_mask(&current[ci], cloud, &nv.camera, cfg.closing_radius);
                let proj_area = proj.count_true();
                let mut hits = Vec::new();
                if proj_area > 0 {
                    let mut inter = vec![0usize; nv.regions.len()];
                    for (&on, &label) in proj.iter().zip(nv.labels.iter()) {
                        if on && label != 0 {
                            if let Ok(k) = nv.regions.binary_search_by_key(&label, |r| r.0) {
                                // several groups can share a label only through duplicates; count once
                                inter[k] += 1;
                            }
                        }
                    }
                    for (k, &(_, area, gi)) in nv.regions.iter().enumerate() {
                        let union = proj_area + area - inter[k];
                        if union > 0 && inter[k] as f64 / union as f64 > cfg.eta {
                            hits.push((comps[ci][0], gi));
                        }
                    }
                }
                hits
            })
            .collect();

        let mut merged_any = false;
        for (a, b) in matches {
            merged_any |= dsu.union(a, b);
        }
        if !merged_any {
            break;
        }
    }

    let mut out: Vec<PointGroup> = dsu.components().iter().map(|c| merged(groups, c)).collect();
    out.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.members[0].cmp(&b.members[0])));
    for (i, g) in out.iter_mut().enumerate() {
        g.group_id = i;
    }
    Ok(out)
}

/// Writes each group's id into its members' `instance_id`; every other point becomes `-1`.
pub fn label_cloud(cloud: &ScenePointCloud, groups: &[PointGroup]) -> Result<ScenePointCloud, InstanceError> {
    let mut out = cloud.clone();
    out.instance_id.iter_mut().for_each(|id| *id = -1);
    let mut owner = vec![false; cloud.len()];
    for g in groups {
        for &m in &g.members {
            let slot = owner
                .get_mut(m as usize)
                .ok_or(InstanceError::OverlappingGroups(m))?;
            if *slot {
                return Err(InstanceError::OverlappingGroups(m));
            }
            *slot = true;
            out.instance_id[m as usize] = g.group_id as i32;
        }
    }
    Ok(out)
}

/// `instances.json` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: usize,
    pub points: usize,
    pub origin: Vec<(String, u32)>,
}

pub fn summarize(groups: &[PointGroup]) -> Vec<InstanceSummary> {
    groups
        .iter()
        .map(|g| InstanceSummary {
            id: g.group_id,
            points: g.members.len(),
            origin: g.origin.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{assemble_point_cloud, unproject, CameraIntrinsics, CameraPose};
    use image::RgbImage;
    use nalgebra::{Matrix3, Point3, Vector3};

    fn grid(w: usize, h: usize, on: &[(usize, usize)]) -> Grid<bool> {
        let mut g = Grid::new(w, h, false);
        for &(u, v) in on {
            g.set(u, v, true);
        }
        g
    }

    #[test]
    fn iou_examples() {
        let a = grid(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let far = grid(4, 4, &[(3, 3)]);
        assert_eq!(mask_iou(&a, &far).unwrap(), 0.0);
        let b = grid(4, 4, &[(1, 0), (2, 0), (1, 1), (2, 1)]);
        assert_eq!(mask_iou(&a, &b).unwrap(), 2.0 / 6.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
        let empty = Grid::new(4, 4, false);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou(&a, &Grid::new(3, 4, false)).is_err());
    }

    #[test]
    fn closing_keeps_isolated_pixel_and_fills_gaps() {
        let single = grid(21, 21, &[(10, 10)]);
        assert_eq!(close(&single, 1), single);
        assert_eq!(close(&single, 0), single);
        let gapped = grid(9, 5, &[(2, 2), (4, 2)]);
        let closed = close(&gapped, 1);
        assert!(*closed.get(3, 2));
        assert_eq!(closed.count_true(), 3);
        let corner = grid(5, 5, &[(0, 0)]);
        assert_eq!(close(&corner, 2), corner);
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: 9.5,
            cy: 9.5,
            width: 20,
            height: 20,
        }
    }

    #[test]
    fn group_mask_single_point() {
        let mut cloud = ScenePointCloud::empty(vec!["v00".into()]);
        cloud.push(Point3::new(0.025, 0.025, 1.0), [0; 3], PointSource { view: 0, u: 0, v: 0 });
        let g = PointGroup {
            group_id: 0,
            members: vec![0],
            origin: vec![],
        };
        let cam = Camera::new(k(), CameraPose::identity());
        let m0 = project_group_mask(&g, &cloud, &cam, 0);
        assert_eq!(m0.count_true(), 1);
        assert!(*m0.get(10, 10));
        assert_eq!(project_group_mask(&g, &cloud, &cam, 1), m0);
        let behind = Camera::new(
            k(),
            CameraPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0)).unwrap(),
        );
        assert_eq!(project_group_mask(&g, &cloud, &behind, 1).count_true(), 0);
    }

    /// One 10×10 view at a wall with a 100-pixel label image.
    fn labeled_view(id: &str, labels: Vec<u32>) -> ViewFrame {
        let kk = CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 4.5,
            cy: 4.5,
            width: 10,
            height: 10,
        };
        ViewFrame {
            view_id: id.into(),
            rgb: RgbImage::new(10, 10),
            depth: Grid::new(10, 10, 1.0),
            intrinsics: kk,
            pose: CameraPose::identity(),
            masks: Some(InstanceMask2D {
                view_id: id.into(),
                labels: Grid::from_vec(10, 10, labels).unwrap(),
            }),
        }
    }

    #[test]
    fn lift_counts_and_threshold() {
        let labels: Vec<u32> = (0..100).map(|i| if i < 40 { 0 } else if i < 75 { 1 } else { 2 }).collect();
        let f = labeled_view("v00", labels);
        let pm = unproject(&f);
        let cloud = assemble_point_cloud(std::slice::from_ref(&pm), std::slice::from_ref(&f)).unwrap();
        let masks = vec![f.masks.clone().unwrap()];
        let groups = lift_masks(&masks, std::slice::from_ref(&pm), &cloud, 1).unwrap();
        assert_eq!(groups.iter().map(|g| g.len()).collect::<Vec<_>>(), vec![35, 25]);
        let groups = lift_masks(&masks, std::slice::from_ref(&pm), &cloud, 30).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].len(), 35);

        // label 1 entirely invalid
        let mut invalid = Grid::new(10, 10, true);
        for i in 40..75 {
            invalid.as_mut_slice()[i] = false;
        }
        let pm_masked = pm.masked(&invalid).unwrap();
        let groups = lift_masks(&masks, std::slice::from_ref(&pm_masked), &cloud, 1).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].origin, vec![("v00".to_string(), 2)]);

        let stray = InstanceMask2D {
            view_id: "nope".into(),
            labels: Grid::new(10, 10, 1),
        };
        assert_eq!(
            lift_masks(&[stray], &[pm], &cloud, 1).unwrap_err(),
            InstanceError::UnknownView("nope".into())
        );
    }

    #[test]
    fn unify_two_views_same_object() {
        // identical cameras, object labelled 1 in view a and 7 in view b
        let labels_a: Vec<u32> = (0..100).map(|i| if (i % 10) < 5 && i < 50 { 1 } else { 0 }).collect();
        let labels_b: Vec<u32> = labels_a.iter().map(|&l| l * 7).collect();
        let frames = vec![labeled_view("a", labels_a), labeled_view("b", labels_b)];
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let masks: Vec<_> = frames.iter().map(|f| f.masks.clone().unwrap()).collect();
        let groups = lift_masks(&masks, &pms, &cloud, 1).unwrap();
        assert_eq!(groups.len(), 2);
        let unified = unify_instances(&groups, &cloud, &frames, &UnifyConfig::default()).unwrap();
        assert_eq!(unified.len(), 1);
        assert_eq!(unified[0].len(), 50);
        assert_eq!(unified[0].origin, vec![("a".to_string(), 1), ("b".to_string(), 7)]);

        // single view: identity partition
        let single = unify_instances(&groups[..1], &cloud, &frames, &UnifyConfig::default()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].members, groups[0].members);
    }

    #[test]
    fn unify_keeps_disjoint_objects_apart() {
        let labels_a: Vec<u32> = (0..100).map(|i| if i % 10 < 3 { 1 } else if i % 10 > 6 { 2 } else { 0 }).collect();
        let labels_b: Vec<u32> = labels_a.iter().map(|&l| [0, 5, 3][l as usize]).collect();
        let frames = vec![labeled_view("a", labels_a), labeled_view("b", labels_b)];
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let masks: Vec<_> = frames.iter().map(|f| f.masks.clone().unwrap()).collect();
        let groups = lift_masks(&masks, &pms, &cloud, 1).unwrap();
        let unified = unify_instances(&groups, &cloud, &frames, &UnifyConfig::default()).unwrap();
        assert_eq!(unified.len(), 2);
        assert!(unified.iter().all(|g| g.len() == 60));
        let labeled = label_cloud(&cloud, &unified).unwrap();
        assert_eq!(labeled.instance_id.iter().filter(|&&i| i >= 0).count(), 120);
    }

    #[test]
    fn label_cloud_examples() {
        let mut cloud = ScenePointCloud::empty(vec!["v".into()]);
        for i in 0..10 {
            cloud.push(Point3::origin(), [0; 3], PointSource { view: 0, u: i, v: 0 });
        }
        let g = |id, m: Vec<u32>| PointGroup {
            group_id: id,
            members: m,
            origin: vec![],
        };
        let out = label_cloud(&cloud, &[g(0, vec![0, 1, 2, 3]), g(1, vec![5, 6, 7])]).unwrap();
        assert_eq!(out.instance_id.iter().filter(|&&i| i >= 0).count(), 7);
        assert_eq!(out.instance_id.iter().filter(|&&i| i == -1).count(), 3);
        assert!(label_cloud(&cloud, &[]).unwrap().instance_id.iter().all(|&i| i == -1));
        assert_eq!(
            label_cloud(&cloud, &[g(0, vec![0, 1]), g(1, vec![1, 2])]).unwrap_err(),
            InstanceError::OverlappingGroups(1)
        );
    }

    #[test]
    fn planar_patch_mask_area_matches_projected_quad() {
        let kk = CameraIntrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 31.5,
            width: 64,
            height: 64,
        };
        let src = Camera::new(kk, CameraPose::identity());
        let z = 3.0;
        let mut cloud = ScenePointCloud::empty(vec!["s".into()]);
        for v in 22..42u32 {
            for u in 22..42u32 {
                cloud.push(src.unproject(u as f64, v as f64, z), [0; 3], PointSource { view: 0, u, v });
            }
        }
        let group = PointGroup {
            group_id: 0,
            members: (0..400).collect(),
            origin: vec![],
        };
        let yaw = 15f64.to_radians();
        let rot = Matrix3::new(yaw.cos(), 0.0, yaw.sin(), 0.0, 1.0, 0.0, -yaw.sin(), 0.0, yaw.cos());
        // rotate about the patch center so the patch stays in view
        let center = Vector3::new(0.0, 0.0, z);
        let dst = Camera::new(kk, CameraPose::new(rot, center - rot * center).unwrap());
        let area = project_group_mask(&group, &cloud, &dst, 1).count_true() as f64;

        // pixel-square corners of the patch, projected and measured with the shoelace formula
        let corners = [(21.5, 21.5), (41.5, 21.5), (41.5, 41.5), (21.5, 41.5)];
        let quad: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(u, v)| {
                let (pu, pv, _) = dst.project(&src.unproject(u, v, z)).unwrap();
                (pu, pv)
            })
            .collect();
        let shoelace = (0..4)
            .map(|i| {
                let (a, b) = (quad[i], quad[(i + 1) % 4]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            .abs()
            / 2.0;
        assert!((area - shoelace).abs() <= 0.1 * shoelace, "mask {area} vs quad {shoelace}");
    }

    fn two_view_groups(a: Vec<u32>, b: Vec<u32>) -> (Vec<PointGroup>, ScenePointCloud, Vec<ViewFrame>) {
        let frames = vec![labeled_view("a", a), labeled_view("b", b)];
        let pms: Vec<_> = frames.iter().map(unproject).collect();
        let cloud = assemble_point_cloud(&pms, &frames).unwrap();
        let masks: Vec<_> = frames.iter().map(|f| f.masks.clone().unwrap()).collect();
        let groups = lift_masks(&masks, &pms, &cloud, 1).unwrap();
        (groups, cloud, frames)
    }

    fn member_sets(groups: &[PointGroup]) -> Vec<Vec<u32>> {
        let mut sets: Vec<Vec<u32>> = groups
            .iter()
            .map(|g| {
                let mut m = g.members.clone();
                m.sort_unstable();
                m
            })
            .collect();
        sets.sort();
        sets
    }

    proptest::proptest! {
        #[test]
        fn unify_is_a_partition_of_its_input(
            a in proptest::collection::vec(0u32..4, 100),
            b in proptest::collection::vec(0u32..4, 100),
            eta in 0.05f64..0.95,
        ) {
            let (groups, cloud, frames) = two_view_groups(a, b);
            let cfg = UnifyConfig { eta, ..Default::default() };
            let unified = unify_instances(&groups, &cloud, &frames, &cfg).unwrap();
            let mut input: Vec<u32> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
            let mut output: Vec<u32> = unified.iter().flat_map(|g| g.members.iter().copied()).collect();
            input.sort_unstable();
            output.sort_unstable();
            proptest::prop_assert_eq!(input, output);
            proptest::prop_assert!(unified.len() <= groups.len());
            proptest::prop_assert!(unified.windows(2).all(|w| w[0].len() >= w[1].len()));
        }

        #[test]
        fn unify_ignores_input_order(
            a in proptest::collection::vec(0u32..4, 100),
            b in proptest::collection::vec(0u32..4, 100),
        ) {
            let (groups, cloud, frames) = two_view_groups(a, b);
            let cfg = UnifyConfig::default();
            let forward = unify_instances(&groups, &cloud, &frames, &cfg).unwrap();
            let mut reversed_in = groups.clone();
            reversed_in.reverse();
            let reversed = unify_instances(&reversed_in, &cloud, &frames, &cfg).unwrap();
            proptest::prop_assert_eq!(member_sets(&forward), member_sets(&reversed));
        }

        #[test]
        fn higher_eta_never_merges_more(
            a in proptest::collection::vec(0u32..4, 100),
            b in proptest::collection::vec(0u32..4, 100),
            lo in 0.05f64..0.5,
            step in 0.0f64..0.45,
        ) {
            let (groups, cloud, frames) = two_view_groups(a, b);
            let n = |eta| unify_instances(&groups, &cloud, &frames, &UnifyConfig { eta, ..Default::default() }).unwrap().len();
            proptest::prop_assert!(n(lo + step) >= n(lo));
        }
    }
}
