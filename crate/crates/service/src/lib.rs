//! Local HTTP assessment service.
//!
//! `POST /assess` queues an inference job for a bounding box and a set of
//! assessment periods. Finished jobs persist a probability PNG per period
//! and per-building likelihoods under the work directory; `/buildings` and
//! `/rollup` recompute verdicts from those likelihoods at any threshold
//! without touching the model. `/timeseries` returns the raw backscatter
//! series of one pixel and `/metrics` exposes plaintext counters.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{mpsc, Mutex};
use tower_http::cors::{AllowOrigin, CorsLayer};

use sar_damage::buildings::{
    buildings_to_geojson, class_csv, class_rollup, rollup, rollup_csv, BuildingDamage, DEFAULT_THRESHOLD,
};
use sar_damage::forest::ForestModel;
use sar_damage::geodata::{BuildingFootprint, RasterStack, Region};
use sar_damage::geometry::Rect;
use sar_damage::temporal::{format_date, invasion_date, IntervalCalendar};

pub mod jobs;

use jobs::{AssessmentRequest, JobPlan, JobRecord, JobStatus, JobStore, PlanError};

pub const COVERAGE_HEADER: &str = "x-coverage-note";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("work directory: {0}")]
    Workdir(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Immutable inputs shared by every request.
#[derive(Debug)]
pub struct Dataset {
    pub stack: RasterStack,
    pub model: ForestModel,
    pub footprints: Vec<BuildingFootprint>,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workdir: PathBuf,
    /// Jobs executing at once.
    pub workers: usize,
    /// Jobs waiting for a worker before `/assess` answers 503.
    pub queue_capacity: usize,
    /// Cap on result pixels (window area times period count).
    pub max_result_pixels: usize,
    pub tile_size: usize,
    /// Inference threads per job.
    pub threads: usize,
    /// Allowed browser origins; empty allows any `localhost` / `127.0.0.1` port.
    pub cors_origins: Vec<String>,
}

impl ServiceConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            workers: 1,
            queue_capacity: 8,
            max_result_pixels: 4_000_000,
            tile_size: 256,
            threads: 1,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub inference_runs: AtomicU64,
    pub inferred_pixels: AtomicU64,
    pub jobs_submitted: AtomicU64,
    pub jobs_rejected: AtomicU64,
    pub jobs_completed: AtomicU64,
    pub jobs_failed: AtomicU64,
    pub verdict_requests: AtomicU64,
}

pub struct AppState {
    pub data: Dataset,
    pub config: ServiceConfig,
    pub jobs: RwLock<JobStore>,
    pub metrics: Metrics,
    queue: mpsc::Sender<(String, JobPlan)>,
    pending: Arc<Mutex<mpsc::Receiver<(String, JobPlan)>>>,
}

/// Loads persisted jobs, starts the worker tasks and returns the router.
/// Must be called inside a tokio runtime.
pub fn start(data: Dataset, config: ServiceConfig) -> Result<(Router, Arc<AppState>), ServiceError> {
    data.stack.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
    sar_damage::inference::check_model(&data.model).map_err(|e| ServiceError::Invalid(e.to_string()))?;
    if config.queue_capacity == 0 || config.tile_size == 0 || config.threads == 0 {
        return Err(ServiceError::Invalid("queue capacity, tile size and threads must be positive".into()));
    }
    let store = jobs::load_store(&config.workdir)?;
    let (tx, rx) = mpsc::channel(config.queue_capacity);
    let pending = Arc::new(Mutex::new(rx));
    let state = Arc::new(AppState { data, config, jobs: RwLock::new(store), metrics: Metrics::default(), queue: tx, pending });
    for _ in 0..state.config.workers {
        let (state, rx) = (state.clone(), state.pending.clone());
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                let Some((id, plan)) = next else { break };
                let s = state.clone();
                if let Err(e) = tokio::task::spawn_blocking(move || jobs::run(&s, &id, plan)).await {
                    tracing::error!("job worker panicked: {e}");
                }
            }
        });
    }
    Ok((router(state.clone()), state))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/assess", post(assess))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/raster/{period}", get(job_raster))
        .route("/jobs/{id}/buildings", get(job_buildings))
        .route("/buildings", get(buildings))
        .route("/rollup", get(rollup_handler))
        .route("/timeseries", get(timeseries))
        .route("/metrics", get(metrics))
        .layer(cors(&state.config.cors_origins))
        .with_state(state)
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::predicate(|origin: &HeaderValue, _| {
            let Ok(o) = origin.to_str() else { return false };
            let host = o.strip_prefix("http://").or_else(|| o.strip_prefix("https://")).unwrap_or("");
            let host = host.rsplit_once(':').map_or(host, |(h, port)| if port.chars().all(|c| c.is_ascii_digit()) { h } else { host });
            host == "localhost" || host == "127.0.0.1" || host == "[::1]"
        })
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([header::HeaderName::from_static(COVERAGE_HEADER)])
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(data: Dataset, config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let (app, _) = start(data, config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

struct ApiError(StatusCode, Value);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, json!({ "error": msg.into() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn rect_json(r: &Rect) -> Value {
    json!([r.min_x, r.min_y, r.max_x, r.max_y])
}

async fn info(State(s): State<Arc<AppState>>) -> Json<Value> {
    let grid = s.data.stack.grid();
    let periods: Vec<Value> = IntervalCalendar::default()
        .all()
        .iter()
        .map(|iv| json!({ "index": iv.index, "start": format_date(iv.start), "end": format_date(iv.end) }))
        .collect();
    Json(json!({
        "width": grid.width,
        "height": grid.height,
        "crs": grid.transform.crs,
        "transform": grid.transform.to_array(),
        "extent": rect_json(&grid.extent()),
        "periods": periods,
        "invasion_date": format_date(invasion_date()),
        "default_threshold": DEFAULT_THRESHOLD,
        "models": [{ "id": jobs::MODEL_ID, "n_trees": s.data.model.n_trees() }],
        "max_result_pixels": s.config.max_result_pixels,
    }))
}

async fn assess(State(s): State<Arc<AppState>>, Json(req): Json<AssessmentRequest>) -> Result<Response, ApiError> {
    let plan = match jobs::plan(&s, &req) {
        Ok(p) => p,
        Err(PlanError::OutsideExtent(extent)) => {
            return Err(ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "bbox is not inside the loaded stack", "extent": rect_json(&extent) }),
            ))
        }
        Err(PlanError::Invalid(msg)) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg)),
        Err(PlanError::TooLarge { pixels, cap }) => {
            return Err(ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": format!("result of {pixels} pixels exceeds the cap of {cap}"), "max_result_pixels": cap }),
            ))
        }
    };
    let rec = {
        let mut store = s.jobs.write().expect("job store lock");
        let id = store.next_id();
        let rec = JobRecord { id: id.clone(), request: req, status: JobStatus::Queued, progress: 0.0, error: None, result: None };
        store.records.insert(id, rec.clone());
        rec
    };
    let id = rec.id.clone();
    if let Err(e) = jobs::save_record(&s.config.workdir, &rec) {
        s.jobs.write().expect("job store lock").records.remove(&id);
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("could not persist job: {e}")));
    }
    if s.queue.try_send((id.clone(), plan)).is_err() {
        s.jobs.write().expect("job store lock").records.remove(&id);
        let _ = std::fs::remove_dir_all(jobs::job_dir(&s.config.workdir, &id));
        s.metrics.jobs_rejected.fetch_add(1, Ordering::Relaxed);
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "job queue is full; retry later"));
    }
    s.metrics.jobs_submitted.fetch_add(1, Ordering::Relaxed);
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id, "status": "queued", "href": format!("/jobs/{id}") }))).into_response())
}

fn find_job(s: &AppState, id: &str) -> Result<JobRecord, ApiError> {
    s.jobs.read().expect("job store lock").records.get(id).cloned().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

async fn job_status(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let rec = find_job(&s, &id)?;
    let mut body = serde_json::to_value(&rec).expect("record serializes");
    if let Some(r) = &rec.result {
        let rasters: Vec<Value> = r.periods.iter().map(|p| json!({ "period": p, "href": format!("/jobs/{id}/raster/{p}") })).collect();
        body["result"]["rasters"] = json!(rasters);
        body["result"]["buildings"] = json!(format!("/jobs/{id}/buildings"));
    }
    Ok(Json(body))
}

async fn job_raster(State(s): State<Arc<AppState>>, Path((id, period)): Path<(String, u8)>) -> Result<Response, ApiError> {
    let rec = find_job(&s, &id)?;
    let has = rec.result.as_ref().is_some_and(|r| r.periods.contains(&period));
    if !has {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("job {id} has no raster for period {period}")));
    }
    let bytes = std::fs::read(jobs::raster_path(&s.config.workdir, &id, period))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct ThresholdQuery {
    threshold: Option<f64>,
    bbox: Option<String>,
    level: Option<String>,
    format: Option<String>,
}

fn threshold(q: &ThresholdQuery) -> Result<f64, ApiError> {
    let t = q.threshold.unwrap_or(DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&t) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("threshold {t} is outside [0, 1]")));
    }
    Ok(t)
}

fn parse_bbox(q: &ThresholdQuery) -> Result<Option<Rect>, ApiError> {
    let Some(text) = &q.bbox else { return Ok(None) };
    let v: Vec<f64> = text.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad_bbox())?;
    match v[..] {
        [a, b, c, d] if v.iter().all(|x| x.is_finite()) && a < c && b < d => Ok(Some(Rect::new(a, b, c, d))),
        _ => Err(bad_bbox()),
    }
}

fn bad_bbox() -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bbox must be min_x,min_y,max_x,max_y")
}

/// Buildings from finished jobs; a later job replaces an earlier result
/// for the same building.
fn assessed(s: &AppState, bbox: Option<&Rect>) -> Vec<BuildingDamage> {
    let store = s.jobs.read().expect("job store lock");
    let mut latest: BTreeMap<String, BuildingDamage> = BTreeMap::new();
    for (_, bs) in store.done() {
        for b in bs.iter() {
            if bbox.is_none_or(|r| r.contains(b.centroid)) {
                latest.insert(b.id.clone(), b.clone());
            }
        }
    }
    latest.into_values().collect()
}

async fn job_buildings(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<ThresholdQuery>) -> Result<Json<Value>, ApiError> {
    let t = threshold(&q)?;
    find_job(&s, &id)?;
    let bs = s.jobs.read().expect("job store lock").buildings.get(&id).cloned();
    let bs = bs.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("job {id} has no results yet")))?;
    s.metrics.verdict_requests.fetch_add(1, Ordering::Relaxed);
    Ok(Json(collection(&bs, &s.data.footprints, t)))
}

fn collection(bs: &[BuildingDamage], footprints: &[BuildingFootprint], t: f64) -> Value {
    let mut doc = buildings_to_geojson(bs, footprints, t);
    doc["threshold"] = json!(t);
    doc["n_buildings"] = json!(bs.len());
    doc["n_damaged"] = json!(bs.iter().filter(|b| b.is_damaged(t)).count());
    doc
}

async fn buildings(State(s): State<Arc<AppState>>, Query(q): Query<ThresholdQuery>) -> Result<Response, ApiError> {
    let t = threshold(&q)?;
    let bbox = parse_bbox(&q)?;
    s.metrics.verdict_requests.fetch_add(1, Ordering::Relaxed);
    let bs = assessed(&s, bbox.as_ref());
    let doc = collection(&bs, &s.data.footprints, t);
    let mut resp = Json(doc).into_response();
    if bs.is_empty() {
        resp.headers_mut().insert(COVERAGE_HEADER, HeaderValue::from_static("no completed assessment covers this area"));
    }
    Ok(resp)
}

async fn rollup_handler(State(s): State<Arc<AppState>>, Query(q): Query<ThresholdQuery>) -> Result<Response, ApiError> {
    let t = threshold(&q)?;
    let bbox = parse_bbox(&q)?;
    let level = q.level.as_deref().unwrap_or("region");
    let csv = match q.format.as_deref().unwrap_or("json") {
        "json" => false,
        "csv" => true,
        other => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown format {other:?}; use json or csv"))),
    };
    s.metrics.verdict_requests.fetch_add(1, Ordering::Relaxed);
    let bs = assessed(&s, bbox.as_ref());
    let (rows, text) = match level {
        "region" => {
            let r = rollup(&bs, &s.data.regions, t);
            (serde_json::to_value(&r).expect("rows serialize"), rollup_csv(&r))
        }
        "class" => {
            let r = class_rollup(&bs, t);
            (serde_json::to_value(&r).expect("rows serialize"), class_csv(&r))
        }
        other => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown level {other:?}; use region or class"))),
    };
    let mut resp = if csv {
        ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response()
    } else {
        Json(json!({ "level": level, "threshold": t, "n_buildings": bs.len(), "rows": rows })).into_response()
    };
    if bs.is_empty() {
        resp.headers_mut().insert(COVERAGE_HEADER, HeaderValue::from_static("no completed assessment covers this area"));
    }
    Ok(resp)
}

#[derive(Debug, Deserialize)]
struct PointQuery {
    x: f64,
    y: f64,
}

async fn timeseries(State(s): State<Arc<AppState>>, Query(q): Query<PointQuery>) -> Result<Json<Value>, ApiError> {
    let stack = &s.data.stack;
    let grid = stack.grid();
    let Some((col, row)) = grid.crs_to_pixel(q.x, q.y) else {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": "point is outside the loaded stack", "extent": rect_json(&grid.extent()) }),
        ));
    };
    let i = row * stack.width + col;
    let mut groups: BTreeMap<(u32, String), Vec<&sar_damage::geodata::Layer>> = BTreeMap::new();
    for l in &stack.layers {
        groups.entry((l.orbit, l.polarization.to_string())).or_default().push(l);
    }
    let series: Vec<Value> = groups
        .into_iter()
        .map(|((orbit, pol), mut layers)| {
            layers.sort_by_key(|l| l.timestamp);
            let samples: Vec<Value> = layers
                .iter()
                .map(|l| {
                    let v = l.values[i];
                    if v.is_nan() {
                        json!({ "date": format_date(l.timestamp), "value": null, "gap": true })
                    } else {
                        json!({ "date": format_date(l.timestamp), "value": v, "gap": false })
                    }
                })
                .collect();
            json!({ "orbit": orbit, "direction": layers[0].direction.to_string(), "polarization": pol, "samples": samples })
        })
        .collect();
    Ok(Json(json!({ "x": q.x, "y": q.y, "col": col, "row": row, "unit": "dB", "series": series })))
}

async fn metrics(State(s): State<Arc<AppState>>) -> Response {
    let m = &s.metrics;
    let jobs = s.jobs.read().expect("job store lock");
    let count = |st: JobStatus| jobs.records.values().filter(|r| r.status == st).count();
    let rows = [
        ("sar_damage_inference_runs_total", "counter", m.inference_runs.load(Ordering::Relaxed)),
        ("sar_damage_inferred_pixels_total", "counter", m.inferred_pixels.load(Ordering::Relaxed)),
        ("sar_damage_jobs_submitted_total", "counter", m.jobs_submitted.load(Ordering::Relaxed)),
        ("sar_damage_jobs_rejected_total", "counter", m.jobs_rejected.load(Ordering::Relaxed)),
        ("sar_damage_jobs_completed_total", "counter", m.jobs_completed.load(Ordering::Relaxed)),
        ("sar_damage_jobs_failed_total", "counter", m.jobs_failed.load(Ordering::Relaxed)),
        ("sar_damage_verdict_requests_total", "counter", m.verdict_requests.load(Ordering::Relaxed)),
        ("sar_damage_jobs_queued", "gauge", count(JobStatus::Queued) as u64),
        ("sar_damage_jobs_running", "gauge", count(JobStatus::Running) as u64),
    ];
    let mut text = String::new();
    for (name, kind, v) in rows {
        text.push_str(&format!("# TYPE {name} {kind}\n{name} {v}\n"));
    }
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], text).into_response()
}
