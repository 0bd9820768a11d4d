//! Dense per-pixel inference over a raster stack.
//!
//! Work is split into (period, tile) units run on a bounded worker pool.
//! Each unit reads the shared stack and model and produces its own tile, so
//! the assembled maps do not depend on tile size or worker count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SegmentPlan, Window, FEATURE_LEN, FEATURE_ORDER_TAG};
use crate::forest::ForestModel;
use crate::geodata::{PeriodMap, ProbabilityMap, RasterStack};
use crate::pwtt;
use crate::temporal::{IntervalCalendar, TimeInterval};
use crate::workers;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("model is incompatible with this build: {0}")]
    Incompatible(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceJob {
    pub periods: Vec<u8>,
    pub reference_period: u8,
    pub window: Window,
    pub tile_size: usize,
    #[serde(skip, default = "workers::default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub calendar: IntervalCalendar,
}

impl Default for InferenceJob {
    fn default() -> Self {
        Self {
            periods: (1..=12).collect(),
            reference_period: 0,
            window: Window::Pixel,
            tile_size: 256,
            threads: workers::default_threads(),
            calendar: IntervalCalendar::default(),
        }
    }
}

impl InferenceJob {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.periods.is_empty() {
            return Err(InferenceError::InvalidJob("no assessment periods requested".into()));
        }
        if self.tile_size == 0 {
            return Err(InferenceError::InvalidJob("tile_size must be positive".into()));
        }
        for &p in &self.periods {
            if p as usize >= self.calendar.count {
                return Err(InferenceError::InvalidJob(format!("period {p} is outside the calendar")));
            }
            if p <= self.reference_period {
                return Err(InferenceError::InvalidJob(format!(
                    "period {p} does not follow reference period {}",
                    self.reference_period
                )));
            }
        }
        Ok(())
    }

    fn intervals(&self) -> (TimeInterval, Vec<TimeInterval>) {
        let reference = self.calendar.interval(self.reference_period as i64).expect("validated");
        let periods = self.periods.iter().map(|&p| self.calendar.interval(p as i64).expect("validated")).collect();
        (reference, periods)
    }
}

pub fn check_model(model: &ForestModel) -> Result<(), InferenceError> {
    if model.feature_order_tag != FEATURE_ORDER_TAG || model.n_features != FEATURE_LEN {
        return Err(InferenceError::Incompatible(format!(
            "feature order '{}' ({} features), expected '{}' ({} features)",
            model.feature_order_tag, model.n_features, FEATURE_ORDER_TAG, FEATURE_LEN
        )));
    }
    if model.trees.is_empty() {
        return Err(InferenceError::Incompatible("model has no trees".into()));
    }
    Ok(())
}

/// Arithmetic mean of the per-orbit probabilities, in the given order.
pub fn fuse_probabilities(per_orbit: &[f64]) -> Option<f64> {
    if per_orbit.is_empty() {
        return None;
    }
    Some(per_orbit.iter().sum::<f64>() / per_orbit.len() as f64)
}

/// Per-orbit probabilities for a pixel, ascending by orbit id. Orbits with
/// an empty segment are skipped.
pub fn orbit_probabilities(stack: &RasterStack, model: &ForestModel, plans: &[SegmentPlan], col: usize, row: usize, window: Window) -> Vec<(u32, f64)> {
    plans
        .iter()
        .filter_map(|plan| {
            let segs = plan.extract(stack, col, row, window);
            let fv = segs.feature_vector().ok()?;
            Some((plan.orbit, model.predict(&fv)))
        })
        .collect()
}

fn plans_for(stack: &RasterStack, reference: &TimeInterval, assessment: &TimeInterval) -> Vec<SegmentPlan> {
    stack
        .orbits()
        .into_iter()
        .map(|o| SegmentPlan::new(stack, o, reference, assessment))
        .filter(SegmentPlan::is_usable)
        .collect()
}

/// Orbit-fused damage probability of one pixel, `None` for nodata.
pub fn infer_pixel(
    stack: &RasterStack,
    model: &ForestModel,
    pixel: (usize, usize),
    reference: &TimeInterval,
    assessment: &TimeInterval,
    window: Window,
) -> Option<f64> {
    let plans = plans_for(stack, reference, assessment);
    let probs: Vec<f64> = orbit_probabilities(stack, model, &plans, pixel.0, pixel.1, window)
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    fuse_probabilities(&probs)
}

struct Tile {
    period: usize,
    col0: usize,
    row0: usize,
    w: usize,
    h: usize,
}

fn tiles(width: usize, height: usize, size: usize, n_periods: usize) -> Vec<Tile> {
    let mut out = Vec::new();
    for period in 0..n_periods {
        for row0 in (0..height).step_by(size) {
            for col0 in (0..width).step_by(size) {
                out.push(Tile { period, col0, row0, w: size.min(width - col0), h: size.min(height - row0) });
            }
        }
    }
    out
}

/// Runs `score(plans, col, row)` over every pixel of every job period, or
/// only where `mask` is set. Unscored pixels are NaN.
fn dense_maps<F>(
    stack: &RasterStack,
    job: &InferenceJob,
    mask: Option<&[bool]>,
    progress: &(dyn Fn(usize, usize) + Sync),
    score: F,
) -> Vec<PeriodMap>
where
    F: Fn(&[SegmentPlan], usize, usize) -> Option<f64> + Sync,
{
    let (reference, periods) = job.intervals();
    let plans: Vec<Vec<SegmentPlan>> = periods.iter().map(|p| plans_for(stack, &reference, p)).collect();
    let units = tiles(stack.width, stack.height, job.tile_size, periods.len());
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results = workers::map_indexed(units.len(), job.threads, |i| {
        let t = &units[i];
        let mut out = Vec::with_capacity(t.w * t.h);
        for row in t.row0..t.row0 + t.h {
            for col in t.col0..t.col0 + t.w {
                if mask.is_some_and(|m| !m[row * stack.width + col]) {
                    out.push(f32::NAN);
                    continue;
                }
                out.push(score(&plans[t.period], col, row).map_or(f32::NAN, |v| v as f32));
            }
        }
        let finished = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        progress(finished, units.len());
        out
    });

    let mut maps: Vec<PeriodMap> = job
        .periods
        .iter()
        .map(|&p| PeriodMap {
            width: stack.width,
            height: stack.height,
            transform: stack.transform.clone(),
            period_index: p,
            values: vec![f32::NAN; stack.width * stack.height],
        })
        .collect();
    for (t, data) in units.iter().zip(results) {
        let map = &mut maps[t.period];
        for (r, chunk) in data.chunks(t.w).enumerate() {
            let start = (t.row0 + r) * stack.width + t.col0;
            map.values[start..start + t.w].copy_from_slice(chunk);
        }
    }
    maps
}

/// One probability map per requested period, aligned with the stack grid.
pub fn infer_map(stack: &RasterStack, model: &ForestModel, job: &InferenceJob) -> Result<Vec<ProbabilityMap>, InferenceError> {
    infer_map_with_progress(stack, model, job, &|_, _| {})
}

/// As [`infer_map`], calling `progress(done, total)` after every tile.
pub fn infer_map_with_progress(
    stack: &RasterStack,
    model: &ForestModel,
    job: &InferenceJob,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<ProbabilityMap>, InferenceError> {
    infer_masked(stack, model, job, None, progress)
}

/// As [`infer_map`] but only pixels with `mask[row * width + col]` set are
/// evaluated; the rest are nodata.
pub fn infer_map_masked(stack: &RasterStack, model: &ForestModel, job: &InferenceJob, mask: &[bool]) -> Result<Vec<ProbabilityMap>, InferenceError> {
    check_mask(stack, mask)?;
    infer_masked(stack, model, job, Some(mask), &|_, _| {})
}

fn check_mask(stack: &RasterStack, mask: &[bool]) -> Result<(), InferenceError> {
    if mask.len() != stack.width * stack.height {
        return Err(InferenceError::InvalidJob(format!("mask has {} cells, grid has {}", mask.len(), stack.width * stack.height)));
    }
    Ok(())
}

fn infer_masked(
    stack: &RasterStack,
    model: &ForestModel,
    job: &InferenceJob,
    mask: Option<&[bool]>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<ProbabilityMap>, InferenceError> {
    check_model(model)?;
    job.validate()?;
    Ok(dense_maps(stack, job, mask, progress, |plans, col, row| {
        let probs: Vec<f64> = orbit_probabilities(stack, model, plans, col, row, job.window)
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        fuse_probabilities(&probs)
    }))
}

/// Dense t-test score maps (`|t|`, unbounded) for the job periods.
pub fn pwtt_maps(stack: &RasterStack, job: &InferenceJob) -> Result<Vec<PeriodMap>, InferenceError> {
    pwtt_masked(stack, job, None)
}

pub fn pwtt_maps_masked(stack: &RasterStack, job: &InferenceJob, mask: &[bool]) -> Result<Vec<PeriodMap>, InferenceError> {
    check_mask(stack, mask)?;
    pwtt_masked(stack, job, Some(mask))
}

fn pwtt_masked(stack: &RasterStack, job: &InferenceJob, mask: Option<&[bool]>) -> Result<Vec<PeriodMap>, InferenceError> {
    job.validate()?;
    Ok(dense_maps(stack, job, mask, &|_, _| {}, |plans, col, row| {
        pwtt::score_with_plans(stack, plans, col, row, job.window)
    }))
}
