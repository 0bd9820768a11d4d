//! Assessment jobs: request validation, the in-memory store, the on-disk
//! record and the blocking job body.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use sar_damage::buildings::{assess_buildings, BuildingDamage};
use sar_damage::geodata::{export_uint8, period_dir_name, BuildingFootprint, GridSpec, PeriodMap};
use sar_damage::geometry::Rect;
use sar_damage::inference::{infer_map_with_progress, InferenceJob};
use sar_damage::temporal::IntervalCalendar;
use sar_damage::Window;

use crate::{AppState, Metrics};

pub const MODEL_ID: &str = "default";
const JOBS_DIR: &str = "jobs";
const RECORD_FILE: &str = "job.json";
const BUILDINGS_FILE: &str = "buildings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRequest {
    /// `[min_x, min_y, max_x, max_y]` in stack CRS units.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub reference_period: u8,
    pub periods: Vec<u8>,
    #[serde(default)]
    pub window: Window,
    #[serde(default = "default_model")]
    pub model: String,
}

fn default_model() -> String {
    MODEL_ID.into()
}

impl AssessmentRequest {
    pub fn rect(&self) -> Rect {
        let [a, b, c, d] = self.bbox;
        Rect::new(a, b, c, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Pixel window of the stack grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelWindow {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn grow(&self, margin: usize, grid_w: usize, grid_h: usize) -> PixelWindow {
        let col0 = self.col0.saturating_sub(margin);
        let row0 = self.row0.saturating_sub(margin);
        let col1 = (self.col0 + self.width + margin).min(grid_w);
        let row1 = (self.row0 + self.height + margin).min(grid_h);
        PixelWindow { col0, row0, width: col1 - col0, height: row1 - row0 }
    }

    fn union_rect(&self, r: &Rect, grid: &GridSpec) -> PixelWindow {
        let w = cover(r, grid);
        let col0 = self.col0.min(w.col0);
        let row0 = self.row0.min(w.row0);
        let col1 = (self.col0 + self.width).max(w.col0 + w.width);
        let row1 = (self.row0 + self.height).max(w.row0 + w.height);
        PixelWindow { col0, row0, width: col1 - col0, height: row1 - row0 }
    }
}

/// Smallest pixel window whose cells cover `r`, clipped to the grid.
pub fn cover(r: &Rect, grid: &GridSpec) -> PixelWindow {
    let t = &grid.transform;
    let (c_a, r_a) = t.crs_to_fractional(r.min_x, r.min_y);
    let (c_b, r_b) = t.crs_to_fractional(r.max_x, r.max_y);
    let clampf = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    let col0 = clampf(c_a.min(c_b).floor(), grid.width);
    let col1 = clampf(c_a.max(c_b).ceil(), grid.width).max(col0 + 1).min(grid.width);
    let row0 = clampf(r_a.min(r_b).floor(), grid.height);
    let row1 = clampf(r_a.max(r_b).ceil(), grid.height).max(row0 + 1).min(grid.height);
    let col0 = col0.min(col1 - 1);
    let row0 = row0.min(row1 - 1);
    PixelWindow { col0, row0, width: col1 - col0, height: row1 - row0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    /// Raster window; covers the bbox and every selected footprint.
    pub window: PixelWindow,
    pub transform: [f64; 6],
    pub crs: String,
    pub periods: Vec<u8>,
    pub n_buildings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub request: AssessmentRequest,
    pub status: JobStatus,
    pub progress: f64,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub result: Option<JobResult>,
}

/// Validated plan for one request.
#[derive(Debug, Clone)]
pub struct JobPlan {
    pub footprints: Vec<BuildingFootprint>,
    pub window: PixelWindow,
    pub job: InferenceJob,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanError {
    OutsideExtent(Rect),
    Invalid(String),
    TooLarge { pixels: usize, cap: usize },
}

pub fn plan(state: &AppState, req: &AssessmentRequest) -> Result<JobPlan, PlanError> {
    if req.model != MODEL_ID {
        return Err(PlanError::Invalid(format!("unknown model {:?}; this service has {MODEL_ID:?}", req.model)));
    }
    if req.bbox.iter().any(|v| !v.is_finite()) || req.bbox[0] >= req.bbox[2] || req.bbox[1] >= req.bbox[3] {
        return Err(PlanError::Invalid("bbox must be [min_x, min_y, max_x, max_y] with min < max".into()));
    }
    let grid = state.data.stack.grid();
    let extent = grid.extent();
    let rect = req.rect();
    if !extent.contains_rect(&rect) {
        return Err(PlanError::OutsideExtent(extent));
    }
    let job = InferenceJob {
        periods: req.periods.clone(),
        reference_period: req.reference_period,
        window: req.window,
        tile_size: state.config.tile_size,
        threads: state.config.threads,
        calendar: IntervalCalendar::default(),
    };
    job.validate().map_err(|e| PlanError::Invalid(e.to_string()))?;
    let mut periods = req.periods.clone();
    periods.sort_unstable();
    periods.dedup();
    if periods.len() != req.periods.len() {
        return Err(PlanError::Invalid("periods must not repeat".into()));
    }

    let footprints: Vec<BuildingFootprint> = state
        .data
        .footprints
        .iter()
        .filter(|f| f.centroid().is_some_and(|c| rect.contains(c)))
        .cloned()
        .collect();
    let mut window = cover(&rect, &grid);
    for f in &footprints {
        window = window.union_rect(&f.bbox(), &grid);
    }
    let pixels = window.pixels() * periods.len();
    if pixels > state.config.max_result_pixels {
        return Err(PlanError::TooLarge { pixels, cap: state.config.max_result_pixels });
    }
    Ok(JobPlan { footprints, window, job: InferenceJob { periods, ..job } })
}

#[derive(Debug, Default)]
pub struct JobStore {
    pub records: BTreeMap<String, JobRecord>,
    pub buildings: BTreeMap<String, Arc<Vec<BuildingDamage>>>,
    pub next: u64,
}

impl JobStore {
    pub fn next_id(&mut self) -> String {
        self.next += 1;
        format!("job-{:06}", self.next)
    }

    /// Completed results, oldest first.
    pub fn done(&self) -> impl Iterator<Item = (&JobRecord, &Arc<Vec<BuildingDamage>>)> {
        self.records
            .values()
            .filter(|r| r.status == JobStatus::Done)
            .filter_map(|r| self.buildings.get(&r.id).map(|b| (r, b)))
    }
}

pub fn job_dir(workdir: &Path, id: &str) -> PathBuf {
    workdir.join(JOBS_DIR).join(id)
}

pub fn raster_path(workdir: &Path, id: &str, period: u8) -> PathBuf {
    job_dir(workdir, id).join(format!("{}.png", period_dir_name(period)))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub fn save_record(workdir: &Path, rec: &JobRecord) -> io::Result<()> {
    let dir = job_dir(workdir, &rec.id);
    fs::create_dir_all(&dir)?;
    let text = serde_json::to_string_pretty(rec).map_err(io::Error::other)?;
    write_atomic(&dir.join(RECORD_FILE), text.as_bytes())
}

/// Reads every job under `workdir`. Jobs that were queued or running when
/// the previous process stopped are marked failed and rewritten.
pub fn load_store(workdir: &Path) -> io::Result<JobStore> {
    let mut store = JobStore::default();
    let root = workdir.join(JOBS_DIR);
    fs::create_dir_all(&root)?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let Ok(text) = fs::read_to_string(dir.join(RECORD_FILE)) else { continue };
        let Ok(mut rec) = serde_json::from_str::<JobRecord>(&text) else {
            tracing::warn!("skipping unreadable job record in {}", dir.display());
            continue;
        };
        if let Some(n) = rec.id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
            store.next = store.next.max(n);
        }
        match rec.status {
            JobStatus::Done => match fs::read_to_string(dir.join(BUILDINGS_FILE)).ok().and_then(|t| serde_json::from_str(&t).ok()) {
                Some(bs) => {
                    store.buildings.insert(rec.id.clone(), Arc::new(bs));
                }
                None => {
                    rec.status = JobStatus::Failed;
                    rec.error = Some("stored buildings are missing or unreadable".into());
                    save_record(workdir, &rec)?;
                }
            },
            JobStatus::Queued | JobStatus::Running => {
                rec.status = JobStatus::Failed;
                rec.error = Some("interrupted by a service restart".into());
                save_record(workdir, &rec)?;
            }
            JobStatus::Failed => {}
        }
        store.records.insert(rec.id.clone(), rec);
    }
    Ok(store)
}

fn update(store: &RwLock<JobStore>, id: &str, f: impl FnOnce(&mut JobRecord)) -> Option<JobRecord> {
    let mut s = store.write().expect("job store lock");
    let rec = s.records.get_mut(id)?;
    f(rec);
    Some(rec.clone())
}

/// Encodes a probability map as 8-bit grey plus alpha; alpha 0 marks nodata.
pub fn encode_png(map: &PeriodMap) -> Result<Vec<u8>, png::EncodingError> {
    let bytes = export_uint8(map);
    let mut data = Vec::with_capacity(bytes.values.len() * 2);
    for (i, v) in bytes.values.iter().enumerate() {
        data.push(*v);
        data.push(if bytes.is_nodata(i) { 0 } else { 255 });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width as u32, map.height as u32);
        enc.set_color(png::ColorType::GrayscaleAlpha);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&data)?;
    }
    Ok(out)
}

fn cut(map: &PeriodMap, col0: usize, row0: usize, w: usize, h: usize) -> PeriodMap {
    let grid = map.grid().window(col0, row0, w, h);
    let mut values = Vec::with_capacity(w * h);
    for r in row0..row0 + h {
        let start = r * map.width + col0;
        values.extend_from_slice(&map.values[start..start + w]);
    }
    PeriodMap { width: w, height: h, transform: grid.transform, period_index: map.period_index, values }
}

/// Runs one job to completion on the calling thread.
pub fn run(state: &AppState, id: &str, plan: JobPlan) {
    let Some(rec) = update(&state.jobs, id, |r| r.status = JobStatus::Running) else { return };
    let _ = save_record(&state.config.workdir, &rec);
    match execute(state, id, &plan) {
        Ok((result, buildings)) => {
            state.jobs.write().expect("job store lock").buildings.insert(id.to_string(), Arc::new(buildings));
            let rec = update(&state.jobs, id, |r| {
                r.status = JobStatus::Done;
                r.progress = 1.0;
                r.result = Some(result);
            });
            if let Some(rec) = rec {
                if let Err(e) = save_record(&state.config.workdir, &rec) {
                    tracing::error!("could not persist job {id}: {e}");
                }
            }
            state.metrics.jobs_completed.fetch_add(1, Ordering::Relaxed);
        }
        Err(msg) => {
            if let Some(rec) = update(&state.jobs, id, |r| {
                r.status = JobStatus::Failed;
                r.error = Some(msg);
            }) {
                let _ = save_record(&state.config.workdir, &rec);
            }
            state.metrics.jobs_failed.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn execute(state: &AppState, id: &str, plan: &JobPlan) -> Result<(JobResult, Vec<BuildingDamage>), String> {
    let stack = &state.data.stack;
    let win = plan.window;
    // a 3x3 window reads one pixel beyond the result window
    let margin = if plan.job.window == Window::Mean3x3 { 1 } else { 0 };
    let outer = win.grow(margin, stack.width, stack.height);
    let crop = stack.crop(outer.col0, outer.row0, outer.width, outer.height);

    record_inference(&state.metrics, outer.pixels() * plan.job.periods.len());
    let progress = |done: usize, total: usize| {
        let p = 0.9 * done as f64 / total.max(1) as f64;
        update(&state.jobs, id, |r| r.progress = r.progress.max(p));
    };
    let maps = infer_map_with_progress(&crop, &state.data.model, &plan.job, &progress).map_err(|e| e.to_string())?;
    let maps: Vec<PeriodMap> = maps.iter().map(|m| cut(m, win.col0 - outer.col0, win.row0 - outer.row0, win.width, win.height)).collect();

    let (buildings, _) = assess_buildings(&plan.footprints, &maps, state.config.threads);
    let dir = job_dir(&state.config.workdir, id);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    for m in &maps {
        let png = encode_png(m).map_err(|e| e.to_string())?;
        write_atomic(&raster_path(&state.config.workdir, id, m.period_index), &png).map_err(|e| e.to_string())?;
    }
    let text = serde_json::to_string(&buildings).map_err(|e| e.to_string())?;
    write_atomic(&dir.join(BUILDINGS_FILE), text.as_bytes()).map_err(|e| e.to_string())?;
    let first = &maps[0];
    let result = JobResult {
        window: win,
        transform: first.transform.to_array(),
        crs: first.transform.crs.clone(),
        periods: plan.job.periods.clone(),
        n_buildings: buildings.len(),
    };
    Ok((result, buildings))
}

fn record_inference(m: &Metrics, pixels: usize) {
    m.inference_runs.fetch_add(1, Ordering::Relaxed);
    m.inferred_pixels.fetch_add(pixels as u64, Ordering::Relaxed);
}
