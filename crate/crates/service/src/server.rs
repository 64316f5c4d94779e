use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use doclab_core::agents::predict_mask;
use doclab_core::annotation::{rasterize, rect_problems, AnnotationRecord, QueueState};
use doclab_core::collab::{disagreement_mask, score_agreement};
use doclab_core::dataset::Sample;
use doclab_core::experiment::{
    read_json, ExperimentDir, QueueLabels, CO_CHECKPOINT, LOOP_REPORT, MAIN_CHECKPOINT,
};
use doclab_core::features::{FeatureSetId, Normalizer};
use doclab_core::pipeline::{run_kss_iteration, ExperimentManifest, LoopReport};
use doclab_core::raster::encode_pgm;
use doclab_core::rle;
use doclab_core::synth::CLASS_NAMES;
use doclab_core::{Error, Result};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::{loop_summary, record_outcome};

pub struct AppState {
    pub dir: ExperimentDir,
    pub manifest: ExperimentManifest,
    pool: HashMap<String, Sample>,
    norm_a: Normalizer,
    norm_b: Normalizer,
    /// Serializes queue mutations and loop transitions.
    writer: Mutex<()>,
    running: AtomicBool,
    last_error: StdMutex<Option<Value>>,
}

impl AppState {
    pub fn load(dir: ExperimentDir) -> Result<Self> {
        let manifest = dir.manifest()?;
        let pool = dir
            .load_pool(&manifest)?
            .into_iter()
            .map(|s| (s.id.clone(), s))
            .collect();
        let (norm_a, norm_b) = dir.load_normalizers()?;
        Ok(Self {
            dir,
            manifest,
            pool,
            norm_a,
            norm_b,
            writer: Mutex::new(()),
            running: AtomicBool::new(false),
            last_error: StdMutex::new(None),
        })
    }

    fn normalizer(&self, set: FeatureSetId) -> &Normalizer {
        match set {
            FeatureSetId::A => &self.norm_a,
            FeatureSetId::B => &self.norm_b,
        }
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }
}

struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("unknown sample {id}"),
        )
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn bad_request(message: impl Into<String>, fields: Vec<String>) -> Self {
        Self {
            fields,
            ..Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "kind": self.kind, "message": self.message } });
        if !self.fields.is_empty() {
            body["error"]["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/sample/{id}", get(sample))
        .route("/api/sample/{id}/labels", post(submit_labels))
        .route("/api/loop/resume", post(resume))
        .route("/api/metrics", get(metrics))
        .route("/api/classes", get(classes))
        .with_state(state)
}

pub async fn serve(dir: ExperimentDir, port: u16) -> Result<()> {
    let state = Arc::new(AppState::load(dir)?);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

async fn queue(State(st): State<Arc<AppState>>) -> ApiResult<Json<QueueState>> {
    Ok(Json(st.dir.read_queue()?.unwrap_or_default()))
}

async fn sample(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let page = st
        .pool
        .get(&id)
        .ok_or_else(|| ApiError::not_found(&id))?
        .clone();
    let st2 = st.clone();
    let view = tokio::task::spawn_blocking(move || -> Result<Value> {
        let main = st2.dir.load_agent(MAIN_CHECKPOINT)?;
        let co = st2.dir.load_agent(CO_CHECKPOINT)?;
        let pm = predict_mask(&main, &page.image, st2.normalizer(main.feature_set))?;
        let pc = predict_mask(&co, &page.image, st2.normalizer(co.feature_set))?;
        let agreement = score_agreement(&pm, &pc)?;
        let img = &page.image;
        let pgm = encode_pgm(img.width(), img.height(), &img.to_bytes());
        Ok(json!({
            "id": page.id,
            "width": img.width(),
            "height": img.height(),
            "image": base64::engine::general_purpose::STANDARD.encode(pgm),
            "image_format": "pgm",
            "pred_main": rle::encode(&pm),
            "pred_co": rle::encode(&pc),
            "disagreement_map": rle::encode(&disagreement_mask(&pm, &pc)?),
            "score": 1.0 - agreement,
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(view))
}

fn parse_record(id: &str, body: &[u8], width: usize, height: usize) -> ApiResult<AnnotationRecord> {
    let record: AnnotationRecord = serde_json::from_slice(body).map_err(|e| {
        let field = e.to_string();
        ApiError::bad_request("malformed annotation record", vec![field])
    })?;
    let mut problems = Vec::new();
    if record.sample_id != id {
        problems.push(format!(
            "sample_id: `{}` does not match the path id `{id}`",
            record.sample_id
        ));
    }
    problems.extend(rect_problems(&record.rectangles, width, height));
    if !problems.is_empty() {
        return Err(ApiError::bad_request("invalid annotation record", problems));
    }
    Ok(record)
}

async fn submit_labels(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<QueueState>> {
    let page = st.pool.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let (w, h) = (page.image.width(), page.image.height());
    let mut record = parse_record(&id, &body, w, h)?;
    let _guard = st.writer.lock().await;
    let mut q = st
        .dir
        .read_queue()?
        .ok_or_else(|| ApiError::conflict("no labelling queue is open"))?;
    if q.is_completed(&id) {
        return Err(ApiError::conflict(format!("{id} is already labelled")));
    }
    if !q.is_pending(&id) {
        return Err(ApiError::conflict(format!("{id} is not in the queue")));
    }
    let mask = rasterize(&record.rectangles, w, h)?;
    record.timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    st.dir.write_label(&id, &mask)?;
    st.dir.write_record(&record)?;
    q.complete(&id)?;
    st.dir.write_queue(&q)?;
    Ok(Json(q))
}

fn run_resumed(st: &AppState) -> Result<Value> {
    let bench = st.dir.load_benchmark(&st.manifest)?;
    let ck = st.dir.load_checkpoints()?;
    let outcome = run_kss_iteration(
        &bench,
        &st.manifest,
        &ck,
        &mut QueueLabels {
            dir: st.dir.clone(),
        },
    )?;
    record_outcome(&st.dir, outcome)
}

async fn resume(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let _guard = st.writer.lock().await;
    if st.is_running() {
        return Err(ApiError::conflict("an update is already running"));
    }
    let q = st
        .dir
        .read_queue()?
        .ok_or_else(|| ApiError::conflict("no suspended iteration"))?;
    if !q.pending.is_empty() {
        return Err(ApiError::conflict(format!(
            "{} samples are still pending",
            q.pending.len()
        )));
    }
    st.running.store(true, Ordering::SeqCst);
    *st.last_error.lock().expect("poisoned") = None;
    let worker = st.clone();
    tokio::task::spawn_blocking(move || {
        let result = run_resumed(&worker);
        if let Err(e) = &result {
            tracing::error!(error = %e, "resumed iteration failed");
            *worker.last_error.lock().expect("poisoned") =
                Some(json!({ "kind": e.kind(), "message": e.to_string() }));
        }
        worker.running.store(false, Ordering::SeqCst);
    });
    Ok(Json(json!({ "status": "resumed", "run_id": q.run_id })))
}

async fn metrics(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let path = st.dir.report_path(LOOP_REPORT);
    let latest = if path.exists() {
        let report: LoopReport = read_json(&path)?;
        loop_summary(&report)
    } else {
        Value::Null
    };
    Ok(Json(json!({
        "running": st.is_running(),
        "last_error": *st.last_error.lock().expect("poisoned"),
        "latest": latest,
    })))
}

/// Display colour of each class; text-family classes share yellow shades.
pub const CLASS_COLORS: [&str; 7] = [
    "#000000", "#ff0000", "#0000ff", "#ffd700", "#ffea00", "#fff176", "#ffff00",
];

async fn classes() -> Json<Value> {
    let list: Vec<Value> = CLASS_NAMES
        .iter()
        .zip(CLASS_COLORS)
        .enumerate()
        .map(|(id, (name, color))| json!({ "id": id, "name": name, "color": color }))
        .collect();
    Json(json!(list))
}
