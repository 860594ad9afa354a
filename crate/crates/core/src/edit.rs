//! Object-level edits on a labeled cloud and the reference-image masks they imply.
//!
//! Removal is a soft delete (`alive = false`), so point indices stay stable
//! and an [`EditLog`] can be replayed on a fresh copy of the original cloud.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::projection::footprint_mask;
use crate::scene::{ScenePointCloud, ViewFrame};
use nalgebra::Vector3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("unknown instance {0}")]
    UnknownInstance(i64),
    #[error("invalid edit: {0}")]
    InvalidOp(String),
    #[error("removed index {0} out of range")]
    IndexOutOfRange(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Remove,
    Translate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub instance_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<[f64; 3]>,
}

impl EditOp {
    pub fn remove(instance_id: i64) -> Self {
        Self {
            kind: EditKind::Remove,
            instance_id,
            delta: None,
        }
    }

    pub fn translate(instance_id: i64, delta: [f64; 3]) -> Self {
        Self {
            kind: EditKind::Translate,
            instance_id,
            delta: Some(delta),
        }
    }

    pub fn validate(&self) -> Result<(), EditError> {
        if self.instance_id < 0 {
            return Err(EditError::InvalidOp(format!("instance id {} is negative", self.instance_id)));
        }
        match (self.kind, self.delta) {
            (EditKind::Translate, None) => Err(EditError::InvalidOp("translate needs a delta".into())),
            (EditKind::Translate, Some(d)) if !d.iter().all(|x| x.is_finite()) => {
                Err(EditError::InvalidOp("delta must be finite".into()))
            }
            (EditKind::Remove, Some(_)) => Err(EditError::InvalidOp("remove takes no delta".into())),
            _ => Ok(()),
        }
    }
}

fn members(cloud: &ScenePointCloud, instance_id: i64) -> Result<Vec<u32>, EditError> {
    let id = i32::try_from(instance_id).map_err(|_| EditError::UnknownInstance(instance_id))?;
    if id < 0 {
        return Err(EditError::UnknownInstance(instance_id));
    }
    let m = cloud.instance_members(id);
    if m.is_empty() {
        return Err(EditError::UnknownInstance(instance_id));
    }
    Ok(m)
}

/// Marks every alive point of the instance dead and returns their indices (ascending).
pub fn remove_instance(cloud: &mut ScenePointCloud, instance_id: i64) -> Result<Vec<u32>, EditError> {
    let m = members(cloud, instance_id)?;
    for &i in &m {
        cloud.alive[i as usize] = false;
    }
    Ok(m)
}

/// Shifts every alive point of the instance by `delta`.
pub fn translate_instance(cloud: &mut ScenePointCloud, instance_id: i64, delta: [f64; 3]) -> Result<(), EditError> {
    let op = EditOp::translate(instance_id, delta);
    op.validate()?;
    let d = Vector3::from(delta);
    for i in members(cloud, instance_id)? {
        cloud.positions[i as usize] += d;
    }
    Ok(())
}

/// Ordered edits plus the point indices each removal killed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLog {
    pub ops: Vec<EditOp>,
    /// One entry per op; empty for translations.
    pub removed: Vec<Vec<u32>>,
}

impl EditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Applies `op` to `cloud` and records it; the log is unchanged on error.
    pub fn apply(&mut self, cloud: &mut ScenePointCloud, op: EditOp) -> Result<(), EditError> {
        op.validate()?;
        let removed = match op.kind {
            EditKind::Remove => remove_instance(cloud, op.instance_id)?,
            EditKind::Translate => {
                translate_instance(cloud, op.instance_id, op.delta.unwrap())?;
                Vec::new()
            }
        };
        self.ops.push(op);
        self.removed.push(removed);
        Ok(())
    }

    /// Replays `ops` on a copy of `original`.
    pub fn replay(original: &ScenePointCloud, ops: &[EditOp]) -> Result<(ScenePointCloud, EditLog), EditError> {
        let mut cloud = original.clone();
        let mut log = EditLog::new();
        for op in ops {
            log.apply(&mut cloud, op.clone())?;
        }
        Ok((cloud, log))
    }

    /// All removed indices, ascending and deduplicated.
    pub fn all_removed(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.removed.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn has_removals(&self) -> bool {
        self.removed.iter().any(|r| !r.is_empty())
    }
}

/// On-disk form of the log (`edits.json`): the ordered op list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditFile {
    pub ops: Vec<EditOp>,
}

/// Per-view masks of pixels to blank in reference images after removals:
/// the removed points' footprint in each view (no z-test) plus their own
/// source pixels.
pub fn reference_masks(
    removed: &[u32],
    cloud: &ScenePointCloud,
    frames: &[ViewFrame],
    splat_radius: u32,
) -> Result<Vec<Grid<bool>>, EditError> {
    if let Some(&bad) = removed.iter().find(|&&i| i as usize >= cloud.len()) {
        return Err(EditError::IndexOutOfRange(bad));
    }
    let masks = frames
        .iter()
        .map(|f| {
            let cam = f.camera();
            let mut mask = footprint_mask(&cam, removed.iter().map(|&i| &cloud.positions[i as usize]), splat_radius);
            if let Some(view) = cloud.view_index(&f.view_id) {
                for &i in removed {
                    let s = cloud.source[i as usize];
                    if s.view == view {
                        mask.set(s.u as usize, s.v as usize, true);
                    }
                }
            }
            mask
        })
        .collect();
    Ok(masks)
}
