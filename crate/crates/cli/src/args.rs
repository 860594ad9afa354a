use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand};
use pointlift_core::bundle::read_json;
use pointlift_core::config::{BackendKind, PipelineConfig};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pointlift", version, about = "Instance-aware point-cloud pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Pipeline settings. Each flag overrides the matching `--config` field.
#[derive(Debug, Default, Clone, Args)]
pub struct PipelineArgs {
    /// Pipeline config JSON; fields left out take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Depth-ratio threshold of the consistency test [default: 0.75].
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Violating views needed to flag a point [default: 1].
    #[arg(long, global = true)]
    pub min_violations: Option<u32>,
    /// Observing views needed before a point can be flagged [default: 1].
    #[arg(long, global = true)]
    pub min_observations: Option<u32>,
    /// Mask IoU above which groups merge [default: 1/3].
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Morphological closing radius for projected masks, in pixels [default: 1].
    #[arg(long, global = true)]
    pub closing_radius: Option<u32>,
    /// Smallest lifted group kept, in points [default: 20].
    #[arg(long, global = true)]
    pub min_group_points: Option<usize>,
    /// Splat half-width for projection, in pixels [default: 0].
    #[arg(long, global = true)]
    pub splat_radius: Option<u32>,
    /// Relative depth tie tolerance of the z-buffer.
    #[arg(long, global = true)]
    pub z_epsilon: Option<f64>,
    /// Inpainting backend [default: baseline].
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["baseline", "external"]))]
    pub backend: Option<String>,
    /// Base URL of the external backend.
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Per-request timeout of the external backend [default: 300].
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    /// Attempts per external request, retrying on 503 [default: 3].
    #[arg(long, global = true)]
    pub attempts: Option<u32>,
    /// Concurrent external requests [default: 2].
    #[arg(long, global = true)]
    pub max_concurrency: Option<usize>,
    /// Median-ratio scale alignment before depth metrics [default: true].
    #[arg(long, global = true, action = ArgAction::Set, value_name = "BOOL")]
    pub depth_scale_align: Option<bool>,
    /// Estimate scale when aligning poses; false gives a rigid fit [default: true].
    #[arg(long, global = true, action = ArgAction::Set, value_name = "BOOL")]
    pub pose_scale: Option<bool>,
}

impl PipelineArgs {
    /// The config file (or defaults) with flags applied, validated.
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut c: PipelineConfig = match &self.config {
            Some(path) => read_json(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {$(
                if let Some(v) = self.$flag.clone() {
                    c.$($field).+ = v;
                }
            )*};
        }
        set!(
            threads => threads,
            tau => tau,
            min_violations => min_violations,
            min_observations => min_observations,
            eta => eta,
            closing_radius => closing_radius,
            min_group_points => min_group_points,
            splat_radius => splat_radius,
            z_epsilon => z_epsilon,
            timeout_secs => backend.timeout_secs,
            attempts => backend.attempts,
            max_concurrency => backend.max_concurrency,
            depth_scale_align => depth_scale_align,
            pose_scale => pose_scale,
        );
        if let Some(name) = &self.backend {
            c.backend.kind = BackendKind::parse(name)
                .ok_or_else(|| CliError::validation("unknown_backend", format!("unknown backend {name:?}")))?;
        }
        if let Some(url) = &self.endpoint {
            c.backend.endpoint = Some(url.clone());
        }
        c.validate().map_err(|e| CliError::validation("invalid_config", e))?;
        Ok(c)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic box room: a bundle plus ground truth.
    Synth(SynthArgs),
    /// Validate a bundle and export its raw unprojected cloud.
    Ingest(StageArgs),
    /// Multi-view consistency filtering.
    Filter(StageArgs),
    /// Lift 2D masks to unified 3D instances (filters first if needed).
    Segment(SegmentArgs),
    /// Append an edit to the log, or undo the last one.
    Edit(EditArgs),
    /// Build render jobs for target cameras from the edited cloud.
    Project(ProjectArgs),
    /// Dispatch render jobs to the backend.
    Render(RenderArgs),
    /// Depth, instance, pose and image metrics against ground truth.
    Eval(EvalArgs),
    /// Serve the scene over HTTP for the viewer.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    /// Scene bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Directory for artifacts.
    #[arg(long, default_value = "work")]
    pub work: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory; receives `bundle/` and `gt/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Training views [default: 8].
    #[arg(long)]
    pub views: Option<usize>,
    /// Box objects, at most 6 [default: 5].
    #[arg(long)]
    pub objects: Option<usize>,
    /// Image width [default: 192].
    #[arg(long)]
    pub width: Option<usize>,
    /// Image height [default: 144].
    #[arg(long)]
    pub height: Option<usize>,
    /// Focal length in pixels [default: 120].
    #[arg(long)]
    pub focal: Option<f64>,
    /// Fraction of pixels per view turned into floaters [default: 0].
    #[arg(long)]
    pub floater_fraction: Option<f64>,
    /// Floater depth as a multiple of true depth [default: 0.4].
    #[arg(long)]
    pub floater_depth_ratio: Option<f64>,
    /// Held-out test views [default: 2].
    #[arg(long)]
    pub test_views: Option<usize>,
    /// RNG seed [default: 7].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Alternative masks: `DIR/<view_id>/masks.json` per view.
    #[arg(long, value_name = "DIR")]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("op").required(true).args(["remove", "translate", "undo"])))]
pub struct EditArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Remove an instance.
    #[arg(long, value_name = "ID")]
    pub remove: Option<i64>,
    /// Translate an instance by `--delta`.
    #[arg(long, value_name = "ID", requires = "delta")]
    pub translate: Option<i64>,
    /// Translation `X,Y,Z` in scene units.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delta: Option<Vec<f64>>,
    /// Drop the last logged edit.
    #[arg(long)]
    pub undo: bool,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["camera", "gt"])))]
pub struct ProjectArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Target camera JSON (bundle camera format).
    #[arg(long, value_name = "FILE")]
    pub camera: Option<PathBuf>,
    /// Job id for `--camera` [default: file stem].
    #[arg(long, requires = "camera")]
    pub job_id: Option<String>,
    /// Ground-truth directory; one job per test view, aligned to the bundle.
    #[arg(long, value_name = "DIR")]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Directory holding `jobs/`.
    #[arg(long, default_value = "work")]
    pub work: PathBuf,
    /// Job to render; repeatable [default: every job].
    #[arg(long = "job", value_name = "ID")]
    pub jobs: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Ground-truth directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Allowed browser origin [default: any].
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Concurrent render jobs [default: backend max_concurrency].
    #[arg(long)]
    pub workers: Option<usize>,
}
