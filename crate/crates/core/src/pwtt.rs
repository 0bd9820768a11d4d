//! Pixel-wise t-test baseline.
//!
//! Per polarization the absolute Welch statistic between the reference and
//! assessment segments; per orbit the mean over polarizations; per pixel the
//! maximum over orbits. A pixel is flagged when the score reaches the cutoff.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SegmentPlan, SeriesSegment, Slot, Window};
use crate::geodata::RasterStack;
use crate::temporal::TimeInterval;

/// Cutoff recommended for Ukraine by the original method's authors.
pub const DEFAULT_CUTOFF: f64 = 1.63;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PwttError {
    #[error("insufficient data: segments need at least 2 samples (pre {n_pre}, post {n_post})")]
    InsufficientData { n_pre: usize, n_post: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// `|t|`; `+inf` when both variances vanish and the means differ.
    pub t_abs: f64,
    pub n_pre: usize,
    pub n_post: usize,
}

// Sums over the sorted sample so the result ignores acquisition order.
fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Welch's statistic with sample (n - 1) variances, two-sided.
pub fn pwtt_statistic(pre: &SeriesSegment, post: &SeriesSegment) -> Result<TTestResult, PwttError> {
    let (n_pre, n_post) = (pre.len(), post.len());
    if n_pre < 2 || n_post < 2 {
        return Err(PwttError::InsufficientData { n_pre, n_post });
    }
    let (m1, v1) = mean_and_sample_var(pre.values());
    let (m2, v2) = mean_and_sample_var(post.values());
    let se2 = v1 / n_pre as f64 + v2 / n_post as f64;
    let diff = (m2 - m1).abs();
    let t_abs = if se2 > 0.0 {
        diff / se2.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(TTestResult { t_abs, n_pre, n_post })
}

pub fn is_damaged(score: f64, cutoff: f64) -> bool {
    score >= cutoff
}

/// Orbit score: mean `|t|` over the polarizations with enough samples.
pub fn orbit_score(pre_post: &[(&SeriesSegment, &SeriesSegment)]) -> Option<f64> {
    let ts: Vec<f64> = pre_post
        .iter()
        .filter_map(|(a, b)| pwtt_statistic(a, b).ok())
        .map(|r| r.t_abs)
        .collect();
    if ts.is_empty() {
        return None;
    }
    Some(ts.iter().sum::<f64>() / ts.len() as f64)
}

/// Pixel score: maximum orbit score. `None` when no orbit has enough data.
pub fn fuse_orbits(scores: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    scores.into_iter().flatten().fold(None, |acc, s| Some(acc.map_or(s, |a: f64| a.max(s))))
}

/// Score of one pixel from segment plans built for its orbits.
pub fn score_with_plans(stack: &RasterStack, plans: &[SegmentPlan], col: usize, row: usize, window: Window) -> Option<f64> {
    fuse_orbits(plans.iter().map(|plan| {
        let s = plan.extract(stack, col, row, window);
        orbit_score(&[(s.get(Slot::RefVV), s.get(Slot::NewVV)), (s.get(Slot::RefVH), s.get(Slot::NewVH))])
    }))
}

pub fn pwtt_score(
    stack: &RasterStack,
    pixel: (usize, usize),
    orbits: &[u32],
    reference: &TimeInterval,
    assessment: &TimeInterval,
    window: Window,
) -> Option<f64> {
    let plans: Vec<SegmentPlan> = orbits.iter().map(|&o| SegmentPlan::new(stack, o, reference, assessment)).collect();
    score_with_plans(stack, &plans, pixel.0, pixel.1, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(v: &[f64]) -> SeriesSegment {
        SeriesSegment::new(v.iter().copied())
    }

    #[test]
    fn identical_series() {
        let a = seg(&[1.0; 4]);
        assert_eq!(pwtt_statistic(&a, &a).unwrap().t_abs, 0.0);
    }

    #[test]
    fn zero_variance_different_means() {
        let r = pwtt_statistic(&seg(&[1.0, 1.0]), &seg(&[2.0, 2.0])).unwrap();
        assert!(r.t_abs.is_infinite());
        assert!(is_damaged(r.t_abs, 1e300));
    }

    #[test]
    fn insufficient() {
        assert_eq!(
            pwtt_statistic(&seg(&[1.0]), &seg(&[1.0, 2.0])),
            Err(PwttError::InsufficientData { n_pre: 1, n_post: 2 })
        );
    }

    #[test]
    fn fusion_rules() {
        let vv = (seg(&[0.0, 1.0]), seg(&[0.0, 1.0]));
        assert_eq!(orbit_score(&[(&vv.0, &vv.1)]), Some(0.0));
        assert_eq!(fuse_orbits([Some(1.5), Some(0.4)]), Some(1.5));
        assert_eq!(fuse_orbits([None, Some(0.4)]), Some(0.4));
        assert_eq!(fuse_orbits([None, None]), None);
        assert!(is_damaged(1.63, DEFAULT_CUTOFF));
        assert!(!is_damaged(1.629, DEFAULT_CUTOFF));
    }
}
