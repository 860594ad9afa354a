//! Training-free, instance-aware point-cloud pipeline.
//!
//! The crate ingests per-view depth, camera and 2D instance-mask predictions,
//! removes floating geometry with a multi-view depth-warping test, lifts the
//! 2D masks into unified 3D instances, supports object-level edits, and
//! projects the scene into novel views as sparse-image + coverage-mask jobs
//! for a pluggable inpainting backend.
//!
//! Module map:
//!
//! - [`scene`]: domain types, unprojection and cloud assembly.
//! - [`bundle`]: the on-disk scene bundle format and raw buffer files.
//! - [`ply`]: point-cloud export/import.
//! - [`projection`]: z-buffered rasterization and depth warping.
//! - [`anomaly`]: multi-view consistency filtering.
//! - [`instance`]: 2D-to-3D instance lifting and cross-view unification.
//! - [`edit`]: removal/translation edits and reference masks.
//! - [`render`]: render jobs, backends and the pull-push baseline.
//! - [`eval`]: pose alignment, depth/instance/image metrics.
//! - [`pipeline`]: stage runners shared by the command line and the service.
//! - [`synth`]: analytic box-room generator used for tests and demos.

pub mod anomaly;
pub mod bundle;
pub mod config;
pub mod edit;
pub mod eval;
pub mod grid;
pub mod instance;
pub mod pipeline;
pub mod ply;
pub mod projection;
pub mod render;
pub mod scene;
pub mod synth;

pub use grid::Grid;
pub use scene::{
    Camera, CameraIntrinsics, CameraPose, DepthMap, InstanceMask2D, PointMap, PointSource,
    SceneBundle, SceneMetadata, ScenePointCloud, ViewFrame,
};
