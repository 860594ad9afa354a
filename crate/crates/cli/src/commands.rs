use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pointlift_core::anomaly::ConsistencyReport;
use pointlift_core::bundle::{
    load_mask_dir, load_mask_png, load_rgb_png, load_scene_bundle, read_camera_file, read_json, save_mask_png,
    save_rgb_png, write_json, write_scene_bundle,
};
use pointlift_core::config::PipelineConfig;
use pointlift_core::edit::{reference_masks, EditFile, EditLog, EditOp};
use pointlift_core::instance::summarize;
use pointlift_core::pipeline::{
    aligned_test_cameras, evaluate, make_backend, refilter, run_filter, run_segment, EvalInputs, Filtered,
};
use pointlift_core::ply::{read_ply, write_ply, PlyEncoding, PlyFlavor};
use pointlift_core::render::{build_render_job, dispatch, read_job, write_job};
use pointlift_core::scene::{assemble_point_cloud, unproject_all};
use pointlift_core::synth::{generate, read_ground_truth, write_ground_truth, SynthConfig};
use pointlift_core::{Grid, SceneBundle, ScenePointCloud};
use pointlift_service::{AppState, ServeOptions, Session};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{EditArgs, EvalArgs, ProjectArgs, RenderArgs, SegmentArgs, ServeArgs, StageArgs, SynthArgs};
use crate::error::CliError;

/// Work-directory file names.
pub mod files {
    pub const RAW_CLOUD: &str = "cloud_raw.ply";
    pub const REPORT: &str = "consistency_report.json";
    pub const VALID_DIR: &str = "valid";
    pub const FILTERED_CLOUD: &str = "cloud_filtered.ply";
    pub const INSTANCES: &str = "instances.json";
    pub const LABELED_CLOUD: &str = "cloud.ply";
    pub const INSTANCES_PLY: &str = "instances.ply";
    pub const EDITS: &str = "edits.json";
    pub const EDITED_CLOUD: &str = "cloud_edited.ply";
    pub const REF_MASKS: &str = "ref_masks";
    pub const JOBS: &str = "jobs";
    pub const RENDERS: &str = "renders";
    pub const EVAL_REPORT: &str = "report.json";
}

type CmdResult = Result<Value, CliError>;

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn valid_path(work: &Path, view_id: &str) -> PathBuf {
    work.join(files::VALID_DIR).join(format!("{view_id}.png"))
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        views: a.views.unwrap_or(d.views),
        objects: a.objects.unwrap_or(d.objects),
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        focal: a.focal.unwrap_or(d.focal),
        floater_fraction: a.floater_fraction.unwrap_or(d.floater_fraction),
        floater_depth_ratio: a.floater_depth_ratio.unwrap_or(d.floater_depth_ratio),
        test_views: a.test_views.unwrap_or(d.test_views),
        seed: a.seed.unwrap_or(d.seed),
    };
    cfg.validate().map_err(|e| CliError::validation("invalid_synth_config", e))?;
    let scene = generate(&cfg);
    write_scene_bundle(&a.out.join("bundle"), &scene.bundle)?;
    write_ground_truth(&a.out.join("gt"), &scene.gt)?;
    Ok(json!({
        "bundle": a.out.join("bundle"),
        "gt": a.out.join("gt"),
        "views": cfg.views,
        "objects": cfg.objects,
        "test_views": cfg.test_views,
    }))
}

pub fn ingest(a: &StageArgs) -> CmdResult {
    let bundle = load_scene_bundle(&a.bundle)?;
    let pointmaps = unproject_all(&bundle.frames);
    let cloud = assemble_point_cloud(&pointmaps, &bundle.frames)?;
    create_dir(&a.work)?;
    write_ply(&a.work.join(files::RAW_CLOUD), &cloud, PlyFlavor::Export, PlyEncoding::BinaryLittleEndian)?;
    Ok(json!({ "views": bundle.frames.len(), "points": cloud.len() }))
}

fn write_filter_outputs(work: &Path, filtered: &Filtered, cfg: &PipelineConfig) -> Result<(), CliError> {
    create_dir(work)?;
    write_json(&work.join(files::REPORT), &filtered.report.summary(&cfg.filter()))?;
    for (id, mask) in filtered.report.view_ids.iter().zip(&filtered.report.masks) {
        save_mask_png(&valid_path(work, id), mask)?;
    }
    write_ply(
        &work.join(files::FILTERED_CLOUD),
        &filtered.cloud,
        PlyFlavor::State,
        PlyEncoding::BinaryLittleEndian,
    )?;
    Ok(())
}

/// Saved validity masks in bundle frame order, if every view has one.
fn saved_masks(bundle: &SceneBundle, work: &Path) -> Result<Option<Vec<Grid<bool>>>, CliError> {
    let paths: Vec<PathBuf> = bundle.frames.iter().map(|f| valid_path(work, &f.view_id)).collect();
    if !paths.iter().all(|p| p.is_file()) {
        return Ok(None);
    }
    let masks = paths.iter().map(|p| load_mask_png(p)).collect::<Result<_, _>>()?;
    Ok(Some(masks))
}

fn filter_stage(bundle: &SceneBundle, work: &Path, cfg: &PipelineConfig) -> Result<Filtered, CliError> {
    if let Some(masks) = saved_masks(bundle, work)? {
        let report = ConsistencyReport::from_masks(bundle.view_ids(), masks);
        return Ok(refilter(bundle, report)?);
    }
    let filtered = run_filter(bundle, &cfg.filter())?;
    write_filter_outputs(work, &filtered, cfg)?;
    Ok(filtered)
}

pub fn filter(a: &StageArgs, cfg: &PipelineConfig) -> CmdResult {
    let bundle = load_scene_bundle(&a.bundle)?;
    let filtered = run_filter(&bundle, &cfg.filter())?;
    write_filter_outputs(&a.work, &filtered, cfg)?;
    Ok(json!({
        "flagged": filtered.report.total_flagged(),
        "points": filtered.cloud.len(),
    }))
}

pub fn segment(a: &SegmentArgs, cfg: &PipelineConfig) -> CmdResult {
    let work = &a.stage.work;
    let bundle = load_scene_bundle(&a.stage.bundle)?;
    let filtered = filter_stage(&bundle, work, cfg)?;
    let masks = match &a.masks {
        Some(dir) => Some(
            bundle
                .frames
                .iter()
                .map(|f| load_mask_dir(&dir.join(&f.view_id), &f.view_id))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let seg = run_segment(&bundle, &filtered, masks.as_deref(), &cfg.unify())?;
    let summary = summarize(&seg.groups);
    write_json(&work.join(files::INSTANCES), &summary)?;
    write_ply(&work.join(files::LABELED_CLOUD), &seg.cloud, PlyFlavor::State, PlyEncoding::BinaryLittleEndian)?;
    write_ply(&work.join(files::INSTANCES_PLY), &seg.cloud, PlyFlavor::Export, PlyEncoding::BinaryLittleEndian)?;
    Ok(json!({
        "instances": summary.len(),
        "points": seg.cloud.len(),
    }))
}

/// The segmented cloud with the saved edit log replayed over it.
fn edited_state(work: &Path) -> Result<(ScenePointCloud, ScenePointCloud, EditLog), CliError> {
    let base = read_ply(&work.join(files::LABELED_CLOUD))?;
    let path = work.join(files::EDITS);
    let ops: Vec<EditOp> = if path.is_file() {
        read_json::<EditFile>(&path)?.ops
    } else {
        Vec::new()
    };
    let (cloud, log) = EditLog::replay(&base, &ops)?;
    Ok((base, cloud, log))
}

pub fn edit(a: &EditArgs, cfg: &PipelineConfig) -> CmdResult {
    let work = &a.stage.work;
    let bundle = load_scene_bundle(&a.stage.bundle)?;
    let (base, mut cloud, mut log) = edited_state(work)?;
    if a.undo {
        let Some((_, rest)) = log.ops.split_last() else {
            return Err(CliError::validation("nothing_to_undo", "edit log is empty"));
        };
        (cloud, log) = EditLog::replay(&base, rest)?;
    } else {
        let op = match (a.remove, a.translate, &a.delta) {
            (Some(id), _, _) => EditOp::remove(id),
            (None, Some(id), Some(d)) if d.len() == 3 => EditOp::translate(id, [d[0], d[1], d[2]]),
            (None, Some(_), _) => return Err(CliError::validation("invalid_edit", "--delta needs X,Y,Z")),
            _ => return Err(CliError::validation("invalid_edit", "no edit given")),
        };
        log.apply(&mut cloud, op)?;
    }
    write_json(&work.join(files::EDITS), &EditFile { ops: log.ops.clone() })?;
    write_ply(&work.join(files::EDITED_CLOUD), &cloud, PlyFlavor::Export, PlyEncoding::BinaryLittleEndian)?;

    let removed = log.all_removed();
    let masks = if removed.is_empty() {
        bundle.frames.iter().map(|f| Grid::new(f.dims().0, f.dims().1, false)).collect()
    } else {
        reference_masks(&removed, &cloud, &bundle.frames, cfg.splat_radius)?
    };
    for (f, m) in bundle.frames.iter().zip(&masks) {
        save_mask_png(&work.join(files::REF_MASKS).join(format!("ref_mask_{}.png", f.view_id)), m)?;
    }
    Ok(json!({
        "edits": log.len(),
        "alive_points": cloud.alive_count(),
        "removed_points": removed.len(),
    }))
}

pub fn project(a: &ProjectArgs, cfg: &PipelineConfig) -> CmdResult {
    let work = &a.stage.work;
    let bundle = load_scene_bundle(&a.stage.bundle)?;
    let (_, cloud, log) = edited_state(work)?;
    let targets = match (&a.camera, &a.gt) {
        (Some(path), _) => {
            let id = match &a.job_id {
                Some(id) => id.clone(),
                None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "job".into()),
            };
            vec![(id, read_camera_file(path)?)]
        }
        (None, Some(gt_dir)) => aligned_test_cameras(&bundle, &read_ground_truth(gt_dir)?, cfg.pose_scale)?.1,
        (None, None) => return Err(CliError::validation("missing_target", "need --camera or --gt")),
    };
    let splat = cfg.splat();
    let jobs = targets
        .par_iter()
        .map(|(id, cam)| {
            let job = build_render_job(id, &cloud, cam, &bundle.frames, &log, &splat)?;
            let dir = work.join(files::JOBS).join(id);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            }
            write_job(&dir, &job)?;
            Ok(json!({ "job_id": id, "covered": job.projection.covered_count() }))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(json!({ "jobs": jobs }))
}

pub fn render(a: &RenderArgs, cfg: &PipelineConfig) -> CmdResult {
    let backend = make_backend(&cfg.backend)?;
    let jobs_dir = a.work.join(files::JOBS);
    let ids: Vec<String> = if a.jobs.is_empty() {
        let entries = fs::read_dir(&jobs_dir).map_err(|e| CliError::io(&jobs_dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&jobs_dir, e))?;
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        ids
    } else {
        a.jobs.clone()
    };
    ids.par_iter()
        .map(|id| {
            let job = read_job(&jobs_dir.join(id))?;
            let img = dispatch(&job, backend.as_ref())?;
            save_rgb_png(&a.work.join(files::RENDERS).join(format!("{id}.png")), &img)?;
            Ok(())
        })
        .collect::<Result<Vec<()>, CliError>>()?;
    Ok(json!({ "backend": backend.name(), "rendered": ids }))
}

pub fn eval(a: &EvalArgs, cfg: &PipelineConfig) -> CmdResult {
    let work = &a.stage.work;
    let bundle = load_scene_bundle(&a.stage.bundle)?;
    let gt = read_ground_truth(&a.gt)?;
    let valid = saved_masks(&bundle, work)?;
    let labeled_path = work.join(files::LABELED_CLOUD);
    let labeled = if labeled_path.is_file() {
        Some(read_ply(&labeled_path)?)
    } else {
        None
    };
    let mut renders = Vec::new();
    for t in &gt.test_views {
        let p = work.join(files::RENDERS).join(format!("{}.png", t.view_id));
        if p.is_file() {
            renders.push((t.view_id.clone(), load_rgb_png(&p)?));
        }
    }
    let report = evaluate(&EvalInputs {
        bundle: &bundle,
        gt: &gt,
        valid: valid.as_deref(),
        labeled: labeled.as_ref(),
        renders: &renders,
        scale_align: cfg.depth_scale_align,
        pose_scale: cfg.pose_scale,
    })?;
    create_dir(work)?;
    write_json(&work.join(files::EVAL_REPORT), &report)?;
    Ok(json!({
        "mean_rmse": report.depth.mean_rmse,
        "mean_delta_125": report.depth.mean_delta_125,
        "ap": report.instances.as_ref().map(|r| r.ap),
        "pose_rms_residual": report.pose.rms_residual,
        "test_views": report.test_views.len(),
    }))
}

pub fn serve(a: &ServeArgs, cfg: &PipelineConfig) -> CmdResult {
    let work = &a.stage.work;
    let bundle = load_scene_bundle(&a.stage.bundle)?;
    let labeled_path = work.join(files::LABELED_CLOUD);
    let labeled = if labeled_path.is_file() {
        read_ply(&labeled_path)?
    } else {
        let filtered = filter_stage(&bundle, work, cfg)?;
        run_segment(&bundle, &filtered, None, &cfg.unify())?.cloud
    };
    let mut session = Session::new(bundle, labeled);
    let edits_path = work.join(files::EDITS);
    if edits_path.is_file() {
        for op in read_json::<EditFile>(&edits_path)?.ops {
            session.apply(op)?;
        }
    }
    let bind: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::validation("invalid_bind", format!("{}:{}: {e}", a.host, a.port)))?;
    let workers = a.workers.unwrap_or(cfg.backend.max_concurrency);
    let state = Arc::new(AppState::new(session, cfg.clone(), workers));
    let opts = ServeOptions {
        bind,
        cors_origin: a.cors_origin.clone(),
        edits_path: Some(edits_path),
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(Path::new("tokio runtime"), e))?;
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    rt.block_on(pointlift_service::serve(state, opts, shutdown))
        .map_err(|e| CliError::io(Path::new(&bind.to_string()), e))?;
    Ok(json!({ "stopped": true }))
}
