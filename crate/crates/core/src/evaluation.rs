//! Label-based evaluation: window scoring, confusion metrics, AUC and
//! precision-targeted threshold calibration.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{LabelPoint, PeriodMap};
use crate::temporal::{assign_label, IntervalCalendar, LabelContext};

/// Periods scored by default: one year either side of the invasion.
pub const DEFAULT_EVAL_PERIODS: std::ops::RangeInclusive<u8> = 1..=8;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("AUC is undefined: all samples have truth {0}")]
    SingleClass(u8),
    #[error("target precision must be in (0, 1], got {0}")]
    BadTarget(f64),
    #[error("target precision {target} is unachievable; best precision over all thresholds is {max_precision:.4}")]
    Unachievable { target: f64, max_precision: f64 },
    #[error("sample universes differ: {0}")]
    UniverseMismatch(String),
    #[error("maps do not share one grid: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub label_id: String,
    pub period: u8,
    pub score: f64,
    pub truth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWarning {
    pub label_id: String,
    pub period: Option<u8>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringReport {
    pub samples: Vec<ScoredSample>,
    pub warnings: Vec<ScoreWarning>,
}

/// Maximum finite value of the 3x3 window around `(col, row)`, truncated at
/// the grid edges.
pub fn window_max(map: &PeriodMap, col: usize, row: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for r in row.saturating_sub(1)..=(row + 1).min(map.height - 1) {
        for c in col.saturating_sub(1)..=(col + 1).min(map.width - 1) {
            let v = map.get(c, r);
            if v.is_finite() {
                best = Some(best.map_or(v as f64, |b| b.max(v as f64)));
            }
        }
    }
    best
}

/// Scores every positive label against every map. Truth comes from the label
/// rule applied to the period's end date; discarded periods are skipped.
pub fn score_labels(maps: &[PeriodMap], labels: &[LabelPoint], calendar: &IntervalCalendar) -> Result<ScoringReport, EvalError> {
    let mut report = ScoringReport::default();
    let Some(first) = maps.first() else {
        return Ok(report);
    };
    let grid = first.grid();
    for m in &maps[1..] {
        if m.grid() != grid {
            return Err(EvalError::GridMismatch(format!("period {} differs from period {}", m.period_index, first.period_index)));
        }
    }
    for label in labels.iter().filter(|l| l.is_positive()) {
        let Some((col, row)) = grid.crs_to_pixel(label.x, label.y) else {
            report.warnings.push(ScoreWarning {
                label_id: label.id.clone(),
                period: None,
                message: format!("label at ({}, {}) is outside the grid", label.x, label.y),
            });
            continue;
        };
        let ctx = LabelContext::new(label.unosat_date);
        for map in maps {
            let Ok(interval) = calendar.interval(map.period_index as i64) else {
                continue;
            };
            let Some(truth) = assign_label(interval.end, &ctx).as_binary() else {
                continue;
            };
            match window_max(map, col, row) {
                Some(score) => report.samples.push(ScoredSample { label_id: label.id.clone(), period: map.period_index, score, truth }),
                None => report.warnings.push(ScoreWarning {
                    label_id: label.id.clone(),
                    period: Some(map.period_index),
                    message: "3x3 window holds no data".into(),
                }),
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(samples: &[ScoredSample], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for s in samples {
            match (s.score >= threshold, s.truth == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision of the damaged class, `None` when nothing is predicted damaged.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ClassMetrics {
    fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp).unwrap_or(0.0);
        let recall = ratio(tp, tp + fn_).unwrap_or(0.0);
        ClassMetrics { precision, recall, f1: f1(precision, recall), support: tp + fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n_samples: usize,
    pub damaged: ClassMetrics,
    pub intact: ClassMetrics,
    pub accuracy: f64,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc_note: Option<String>,
    pub confusion: Confusion,
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half. Computed through mid-ranks in O(n log n).
pub fn auc(samples: &[ScoredSample]) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_pos = samples.iter().filter(|s| s.truth == 1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass(samples[0].truth));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && samples[idx[j + 1]].score == samples[idx[i]].score {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * idx[i..=j].iter().filter(|&&k| samples[k].truth == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn compute_metrics(samples: &[ScoredSample], threshold: f64) -> Result<MetricsReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = Confusion::at(samples, threshold);
    let (auc, auc_note) = match auc(samples) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(MetricsReport {
        threshold,
        n_samples: c.total(),
        damaged: ClassMetrics::new(c.tp, c.fp, c.fn_),
        intact: ClassMetrics::new(c.tn, c.fn_, c.fp),
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        auc,
        auc_note,
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub target_precision: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Candidate thresholds: midpoints between consecutive distinct scores plus 0 and 1, ascending.
pub fn candidate_thresholds(samples: &[ScoredSample]) -> Vec<f64> {
    let mut scores: Vec<f64> = samples.iter().map(|s| s.score).filter(|s| s.is_finite()).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out: Vec<f64> = scores.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    out.push(0.0);
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Smallest candidate threshold whose precision reaches `target`.
pub fn calibrate_threshold(samples: &[ScoredSample], target: f64) -> Result<Calibration, EvalError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(EvalError::BadTarget(target));
    }
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut max_precision: f64 = 0.0;
    for t in candidate_thresholds(samples) {
        let c = Confusion::at(samples, t);
        let Some(p) = c.precision() else { continue };
        if p >= target {
            return Ok(Calibration { threshold: t, target_precision: target, precision: p, recall: c.recall().unwrap_or(0.0) });
        }
        max_precision = max_precision.max(p);
    }
    Err(EvalError::Unachievable { target, max_precision })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub forest: MetricsReport,
    pub pwtt: MetricsReport,
}

fn universe(samples: &[ScoredSample]) -> BTreeSet<(&str, u8, u8)> {
    samples.iter().map(|s| (s.label_id.as_str(), s.period, s.truth)).collect()
}

/// Side-by-side metrics of the forest and the t-test over one sample universe.
pub fn compare_methods(forest: &[ScoredSample], pwtt: &[ScoredSample], forest_threshold: f64, pwtt_cutoff: f64) -> Result<Comparison, EvalError> {
    let (a, b) = (universe(forest), universe(pwtt));
    if a != b || forest.len() != pwtt.len() {
        let only_a: Vec<String> = a.difference(&b).take(5).map(|(id, p, _)| format!("{id}@T{p}")).collect();
        let only_b: Vec<String> = b.difference(&a).take(5).map(|(id, p, _)| format!("{id}@T{p}")).collect();
        return Err(EvalError::UniverseMismatch(format!(
            "{} forest vs {} t-test samples; forest only [{}]; t-test only [{}]",
            forest.len(),
            pwtt.len(),
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    Ok(Comparison { forest: compute_metrics(forest, forest_threshold)?, pwtt: compute_metrics(pwtt, pwtt_cutoff)? })
}

/// Keeps only samples present in both sets (same label, period and truth).
pub fn intersect_universe(a: &[ScoredSample], b: &[ScoredSample]) -> (Vec<ScoredSample>, Vec<ScoredSample>) {
    let common: BTreeSet<(String, u8, u8)> = {
        let ub = universe(b);
        universe(a).intersection(&ub).map(|(id, p, t)| (id.to_string(), *p, *t)).collect()
    };
    let keep = |s: &[ScoredSample]| -> Vec<ScoredSample> {
        s.iter().filter(|x| common.contains(&(x.label_id.clone(), x.period, x.truth))).cloned().collect()
    };
    (keep(a), keep(b))
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Aligned text table, one column per named report. Values in percent.
pub fn render_table(reports: &[(&str, &MetricsReport)]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("threshold".into(), reports.iter().map(|(_, r)| format!("{}", r.threshold)).collect()),
        ("samples".into(), reports.iter().map(|(_, r)| r.n_samples.to_string()).collect()),
    ];
    for (name, class) in [("damaged", true), ("intact", false)] {
        for (metric, get) in [
            ("precision", (|c: &ClassMetrics| c.precision) as fn(&ClassMetrics) -> f64),
            ("recall", |c| c.recall),
            ("F1", |c| c.f1),
        ] {
            rows.push((
                format!("{name} {metric}"),
                reports.iter().map(|(_, r)| pct(get(if class { &r.damaged } else { &r.intact }))).collect(),
            ));
        }
    }
    rows.push(("accuracy".into(), reports.iter().map(|(_, r)| pct(r.accuracy)).collect()));
    rows.push(("AUC".into(), reports.iter().map(|(_, r)| r.auc.map_or("n/a".into(), pct)).collect()));
    rows.push((
        "TP/FP/TN/FN".into(),
        reports
            .iter()
            .map(|(_, r)| format!("{}/{}/{}/{}", r.confusion.tp, r.confusion.fp, r.confusion.tn, r.confusion.fn_))
            .collect(),
    ));

    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..reports.len())
        .map(|i| rows.iter().map(|r| r.1[i].len()).chain([reports[i].0.len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for (i, (name, _)) in reports.iter().enumerate() {
        let _ = write!(out, "  {:>w$}", name, w = col_w[i]);
    }
    out.push('\n');
    for (label, vals) in rows {
        let _ = write!(out, "{label:label_w$}");
        for (i, v) in vals.iter().enumerate() {
            let _ = write!(out, "  {:>w$}", v, w = col_w[i]);
        }
        out.push('\n');
    }
    out
}

pub fn samples_csv(samples: &[ScoredSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label_id", "period", "score", "truth"]).expect("in-memory write");
    for s in samples {
        w.write_record([s.label_id.clone(), s.period.to_string(), s.score.to_string(), s.truth.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
