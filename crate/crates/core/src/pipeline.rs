//! End-to-end helpers: training-set assembly from labels, forest and t-test
//! evaluation runs, and the ablation harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{self, EvalError, MetricsReport, ScoringReport};
use crate::features::{BandSelection, FeatureSubset, FeatureVector, SegmentPlan, Statistic, Window};
use crate::forest::{self, ForestConfig, ForestError, ForestModel};
use crate::geodata::{LabelPoint, RasterStack};
use crate::inference::{self, InferenceError, InferenceJob};
use crate::temporal::{assign_label, IntervalCalendar, LabelContext};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    /// Assessment periods sampled for every label.
    pub periods: Vec<u8>,
    pub reference_period: u8,
    pub window: Window,
    #[serde(default)]
    pub calendar: IntervalCalendar,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            periods: evaluation::DEFAULT_EVAL_PERIODS.collect(),
            reference_period: 0,
            window: Window::Pixel,
            calendar: IntervalCalendar::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub label_id: String,
    pub period: u8,
    pub orbit: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<(FeatureVector, u8)>,
    pub meta: Vec<SampleMeta>,
    /// Labels outside the stack grid.
    pub outside: Vec<String>,
}

impl TrainingSet {
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.1 == 1).count();
        (self.rows.len() - pos, pos)
    }
}

/// One row per (positive label, period, orbit) whose label is not discarded
/// and whose four segments are non-empty.
pub fn training_set(stack: &RasterStack, labels: &[LabelPoint], opts: &TrainingOptions) -> Result<TrainingSet, PipelineError> {
    let cal = &opts.calendar;
    let bad = |e: crate::temporal::TemporalError| PipelineError::Invalid(e.to_string());
    let reference = cal.interval(opts.reference_period as i64).map_err(bad)?;
    let mut plans = Vec::new();
    for &p in &opts.periods {
        if p <= opts.reference_period {
            return Err(PipelineError::Invalid(format!("period {p} does not follow reference period {}", opts.reference_period)));
        }
        let interval = cal.interval(p as i64).map_err(bad)?;
        let per_orbit: Vec<SegmentPlan> =
            stack.orbits().into_iter().map(|o| SegmentPlan::new(stack, o, &reference, &interval)).filter(SegmentPlan::is_usable).collect();
        plans.push((interval, per_orbit));
    }
    let grid = stack.grid();
    let mut set = TrainingSet::default();
    for label in labels.iter().filter(|l| l.is_positive()) {
        let Some((col, row)) = grid.crs_to_pixel(label.x, label.y) else {
            set.outside.push(label.id.clone());
            continue;
        };
        let ctx = LabelContext::new(label.unosat_date);
        for (interval, per_orbit) in &plans {
            let Some(y) = assign_label(interval.end, &ctx).as_binary() else { continue };
            for plan in per_orbit {
                let Ok(fv) = plan.extract(stack, col, row, opts.window).feature_vector() else { continue };
                set.rows.push((fv, y));
                set.meta.push(SampleMeta { label_id: label.id.clone(), period: interval.index, orbit: plan.orbit });
            }
        }
    }
    Ok(set)
}

pub fn train_forest(stack: &RasterStack, labels: &[LabelPoint], opts: &TrainingOptions, config: &ForestConfig) -> Result<ForestModel, PipelineError> {
    let set = training_set(stack, labels, opts)?;
    Ok(forest::train(&set.rows, config)?)
}

fn eval_job(opts: &TrainingOptions, threads: usize) -> InferenceJob {
    InferenceJob {
        periods: opts.periods.clone(),
        reference_period: opts.reference_period,
        window: opts.window,
        threads,
        calendar: opts.calendar.clone(),
        ..Default::default()
    }
}

/// Cells inside the 3x3 window of some positive label.
pub fn label_mask(stack: &RasterStack, labels: &[LabelPoint]) -> Vec<bool> {
    let grid = stack.grid();
    let mut mask = vec![false; stack.width * stack.height];
    for l in labels.iter().filter(|l| l.is_positive()) {
        let Some((col, row)) = grid.crs_to_pixel(l.x, l.y) else { continue };
        for r in row.saturating_sub(1)..=(row + 1).min(stack.height - 1) {
            for c in col.saturating_sub(1)..=(col + 1).min(stack.width - 1) {
                mask[r * stack.width + c] = true;
            }
        }
    }
    mask
}

/// Forest maps for the evaluation periods, computed around the labels only
/// and scored there.
pub fn forest_scores(stack: &RasterStack, model: &ForestModel, labels: &[LabelPoint], opts: &TrainingOptions, threads: usize) -> Result<ScoringReport, PipelineError> {
    let maps = inference::infer_map_masked(stack, model, &eval_job(opts, threads), &label_mask(stack, labels))?;
    Ok(evaluation::score_labels(&maps, labels, &opts.calendar)?)
}

/// t-test maps for the evaluation periods around the labels, scored there.
pub fn pwtt_scores(stack: &RasterStack, labels: &[LabelPoint], opts: &TrainingOptions, threads: usize) -> Result<ScoringReport, PipelineError> {
    let maps = inference::pwtt_maps_masked(stack, &eval_job(opts, threads), &label_mask(stack, labels))?;
    Ok(evaluation::score_labels(&maps, labels, &opts.calendar)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AblationAxis {
    Trees(Vec<usize>),
    Bands(Vec<BandSelection>),
    /// Statistic subsets, each used with both bands.
    Features(Vec<Vec<Statistic>>),
    Window(Vec<Window>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::Trees(_) => "trees",
            AblationAxis::Bands(_) => "bands",
            AblationAxis::Features(_) => "features",
            AblationAxis::Window(_) => "window",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AblationAxis::Trees(v) => v.len(),
            AblationAxis::Bands(v) => v.len(),
            AblationAxis::Features(v) => v.len(),
            AblationAxis::Window(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub axis: String,
    pub value: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

/// Trains one model per axis value on `train` and reports damaged-class
/// metrics at `threshold` on `test`. Everything not on the axis stays at
/// `base_config` / `base_opts`.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    train: (&RasterStack, &[LabelPoint]),
    test: (&RasterStack, &[LabelPoint]),
    axis: &AblationAxis,
    base_config: &ForestConfig,
    base_opts: &TrainingOptions,
    threshold: f64,
    threads: usize,
) -> Result<Vec<AblationPoint>, PipelineError> {
    let mut variants: Vec<(String, ForestConfig, TrainingOptions)> = Vec::new();
    let with_subset = |bands: BandSelection, stats: Vec<Statistic>| {
        let mut c = base_config.clone();
        c.features = FeatureSubset { bands, stats }.indices();
        c.mtry = None;
        c
    };
    match axis {
        AblationAxis::Trees(v) => {
            for &n in v {
                variants.push((n.to_string(), ForestConfig { n_trees: n, ..base_config.clone() }, base_opts.clone()));
            }
        }
        AblationAxis::Bands(v) => {
            for &b in v {
                variants.push((b.to_string(), with_subset(b, Statistic::ALL.to_vec()), base_opts.clone()));
            }
        }
        AblationAxis::Features(v) => {
            for stats in v {
                let name = stats.iter().map(|s| s.name()).collect::<Vec<_>>().join("+");
                variants.push((name, with_subset(BandSelection::Both, stats.clone()), base_opts.clone()));
            }
        }
        AblationAxis::Window(v) => {
            for &w in v {
                variants.push((w.to_string(), base_config.clone(), TrainingOptions { window: w, ..base_opts.clone() }));
            }
        }
    }
    let mut out = Vec::with_capacity(variants.len());
    for (value, config, opts) in variants {
        let model = train_forest(train.0, train.1, &opts, &config)?;
        let scores = forest_scores(test.0, &model, test.1, &opts, threads)?;
        let m: MetricsReport = evaluation::compute_metrics(&scores.samples, threshold)?;
        out.push(AblationPoint {
            axis: axis.name().into(),
            value,
            f1: m.damaged.f1,
            precision: m.damaged.precision,
            recall: m.damaged.recall,
            auc: m.auc,
        });
    }
    Ok(out)
}
