use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use pointlift_core::bundle::{rgb_png_bytes, CameraFile};
use pointlift_core::config::{BackendConfig, BackendKind};
use pointlift_core::edit::{EditError, EditOp};
use pointlift_core::pipeline::{make_backend, PipelineError};
use pointlift_core::projection::SplatOptions;
use pointlift_core::render::{build_render_job, dispatch};

use crate::state::{AppState, JobEntry, JobStatus};
use crate::stream;

pub const REVISION_HEADER: &str = "x-scene-revision";
const STREAM_CHUNK: usize = 4096;

/// JSON error body `{"error": code, "message": ...}`.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownInstance(_) => Self::new(StatusCode::NOT_FOUND, "unknown_instance", e.to_string()),
            _ => Self::new(StatusCode::BAD_REQUEST, "invalid_edit", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/scene", get(scene))
        .route("/v1/cloud", get(cloud))
        .route("/v1/instances", get(instances))
        .route("/v1/edits", post(post_edit))
        .route("/v1/edits/last", delete(undo_edit))
        .route("/v1/render", post(post_render))
        .route("/v1/render/{id}", get(get_render))
        .route("/v1/views/{id}/rgb", get(view_rgb))
        .layer(middleware::from_fn_with_state(state.clone(), stamp_revision))
        .with_state(state)
}

async fn stamp_revision(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let mut resp = next.run(req).await;
    resp.headers_mut()
        .insert(REVISION_HEADER, HeaderValue::from(state.revision()));
    resp
}

async fn scene(State(state): State<Arc<AppState>>) -> Json<Value> {
    let s = state.session.read().unwrap();
    let views: Vec<Value> = s
        .bundle
        .frames
        .iter()
        .map(|f| json!({ "view_id": f.view_id, "camera": CameraFile::from_camera(&f.camera()) }))
        .collect();
    Json(json!({
        "scene_id": s.bundle.metadata.scene_id,
        "units": s.bundle.metadata.units,
        "convention": s.bundle.metadata.convention,
        "revision": s.revision,
        "points": s.cloud.len(),
        "alive_points": s.cloud.alive_count(),
        "instances": s.cloud.instance_ids().len(),
        "edits": s.log.len(),
        "views": views,
    }))
}

#[derive(Deserialize)]
struct CloudQuery {
    #[serde(default)]
    only_alive: bool,
    max_points: Option<usize>,
}

async fn cloud(State(state): State<Arc<AppState>>, Query(q): Query<CloudQuery>) -> ApiResult<Response> {
    if q.max_points == Some(0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", "max_points must be >= 1"));
    }
    let (cloud, revision) = {
        let s = state.session.read().unwrap();
        (s.cloud.clone(), s.revision)
    };
    let indices = stream::select(&cloud, q.only_alive, q.max_points);
    let head = stream::header(indices.len(), revision);
    let chunks: Vec<Vec<usize>> = indices.chunks(STREAM_CHUNK).map(<[usize]>::to_vec).collect();
    let body = futures_util::stream::iter(
        std::iter::once(Ok::<_, std::io::Error>(Bytes::from(head)))
            .chain(chunks.into_iter().map(move |c| Ok(Bytes::from(stream::encode_records(&cloud, &c))))),
    );
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .body(Body::from_stream(body))
        .unwrap())
}

async fn instances(State(state): State<Arc<AppState>>) -> Json<Value> {
    let s = state.session.read().unwrap();
    let cloud = &s.cloud;
    let mut stats: std::collections::BTreeMap<i32, (usize, [f64; 3])> = Default::default();
    for i in 0..cloud.len() {
        let id = cloud.instance_id[i];
        if id < 0 || !cloud.alive[i] {
            continue;
        }
        let e = stats.entry(id).or_insert((0, [0.0; 3]));
        e.0 += 1;
        let p = &cloud.positions[i];
        e.1[0] += p.x;
        e.1[1] += p.y;
        e.1[2] += p.z;
    }
    let list: Vec<Value> = stats
        .iter()
        .map(|(&id, &(n, sum))| {
            json!({
                "id": id,
                "points": n,
                "centroid": sum.map(|c| c / n as f64),
            })
        })
        .collect();
    Json(json!({ "revision": s.revision, "instances": list }))
}

async fn post_edit(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let op: EditOp = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_edit", e.to_string()))?;
    let (revision, count) = state.mutate(|s| s.apply(op).map(|r| (r, s.log.len())))?;
    Ok(Json(json!({ "revision": revision, "edits": count })))
}

async fn undo_edit(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    match state.mutate(|s| s.undo().map(|r| (r, s.log.len())))? {
        (Some(revision), count) => Ok(Json(json!({ "revision": revision, "edits": count }))),
        (None, _) => Err(ApiError::new(StatusCode::CONFLICT, "nothing_to_undo", "edit log is empty")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    camera: CameraFile,
    backend: Option<String>,
    splat_radius: Option<u32>,
}

async fn post_render(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: RenderRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    let mut backend_cfg: BackendConfig = state.config.backend.clone();
    if let Some(name) = &req.backend {
        backend_cfg.kind = BackendKind::parse(name).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "unknown_backend", format!("unknown backend {name:?}"))
        })?;
    }
    let backend = make_backend(&backend_cfg)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "backend_config", e.to_string()))?;
    let camera = req
        .camera
        .to_camera()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_camera", e))?;
    let opts = SplatOptions {
        splat_radius: req.splat_radius.unwrap_or(state.config.splat_radius),
        z_epsilon: state.config.z_epsilon,
    };
    opts.validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e))?;

    // immutable snapshot at submission time
    let (cloud, log, bundle, revision) = {
        let s = state.session.read().unwrap();
        (s.cloud.clone(), s.log.clone(), s.bundle.clone(), s.revision)
    };
    let job_id = state.next_job_id();
    state.jobs.lock().unwrap().insert(
        job_id.clone(),
        JobEntry {
            status: JobStatus::Pending,
            revision,
            backend: backend.name().to_string(),
        },
    );

    let (st, id) = (state.clone(), job_id.clone());
    tokio::spawn(async move {
        let Ok(_permit) = st.workers.clone().acquire_owned().await else { return };
        st.set_job(&id, JobStatus::Running);
        let job_name = id.clone();
        let result = tokio::task::spawn_blocking(move || {
            let job = build_render_job(&job_name, &cloud, &camera, &bundle.frames, &log, &opts)?;
            let img = dispatch(&job, backend.as_ref())?;
            Ok::<_, PipelineError>(rgb_png_bytes(&img))
        })
        .await;
        let status = match result {
            Ok(Ok(png)) => JobStatus::Done(Arc::new(png)),
            Ok(Err(e)) => JobStatus::Failed {
                code: e.code().to_string(),
                message: e.to_string(),
            },
            Err(e) => JobStatus::Failed {
                code: "internal".into(),
                message: e.to_string(),
            },
        };
        st.set_job(&id, status);
    });

    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "job_id": job_id, "revision": revision, "status": "pending" })),
    )
        .into_response())
}

async fn get_render(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = state
        .jobs
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no render job {id}")))?;
    let mut body = json!({
        "job_id": id,
        "status": entry.status.name(),
        "revision": entry.revision,
        "backend": entry.backend,
    });
    Ok(match entry.status {
        JobStatus::Done(png) => ([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response(),
        JobStatus::Failed { code, message } => {
            body["error"] = json!(code);
            body["message"] = json!(message);
            (StatusCode::OK, Json(body)).into_response()
        }
        JobStatus::Pending | JobStatus::Running => (StatusCode::ACCEPTED, Json(body)).into_response(),
    })
}

async fn view_rgb(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let bundle = state.session.read().unwrap().bundle.clone();
    let frame = bundle
        .frame(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_view", format!("no view {id}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], rgb_png_bytes(&frame.rgb)).into_response())
}
