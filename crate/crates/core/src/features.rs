//! Summary-statistic features of paired reference/assessment segments.
//!
//! Each segment (one orbit, one polarization, one interval) is reduced to
//! seven statistics. The classifier input concatenates four blocks in the
//! fixed order `[ref VV, ref VH, new VV, new VH]`, each ordered
//! `(min, max, mean, median, std, kurtosis, skewness)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{Polarization, RasterStack};
use crate::temporal::TimeInterval;

pub const STATS_PER_SEGMENT: usize = 7;
pub const SEGMENTS: usize = 4;
pub const FEATURE_LEN: usize = STATS_PER_SEGMENT * SEGMENTS;

/// Identifies the feature layout; stored in model files.
pub const FEATURE_ORDER_TAG: &str = "ref_vv,ref_vh,new_vv,new_vh;min,max,mean,median,std,kurtosis,skewness;v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("empty segment")]
    EmptySegment,
    #[error("segment {0} is empty")]
    EmptyNamedSegment(Slot),
    #[error("unknown {kind} '{value}'")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Min,
    Max,
    Mean,
    Median,
    Std,
    Kurtosis,
    Skewness,
}

impl Statistic {
    pub const ALL: [Statistic; STATS_PER_SEGMENT] = [
        Statistic::Min,
        Statistic::Max,
        Statistic::Mean,
        Statistic::Median,
        Statistic::Std,
        Statistic::Kurtosis,
        Statistic::Skewness,
    ];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Min => "min",
            Self::Max => "max",
            Self::Mean => "mean",
            Self::Median => "median",
            Self::Std => "std",
            Self::Kurtosis => "kurtosis",
            Self::Skewness => "skewness",
        }
    }
}

impl FromStr for Statistic {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "std" => Ok(Self::Std),
            "kurt" | "kurtosis" => Ok(Self::Kurtosis),
            "skew" | "skewness" => Ok(Self::Skewness),
            _ => Err(FeatureError::Unknown { kind: "statistic", value: s.into() }),
        }
    }
}

/// One of the four segment blocks of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    RefVV,
    RefVH,
    NewVV,
    NewVH,
}

impl Slot {
    pub const ALL: [Slot; SEGMENTS] = [Slot::RefVV, Slot::RefVH, Slot::NewVV, Slot::NewVH];

    pub fn polarization(self) -> Polarization {
        match self {
            Slot::RefVV | Slot::NewVV => Polarization::VV,
            Slot::RefVH | Slot::NewVH => Polarization::VH,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::RefVV => "ref_vv",
            Slot::RefVH => "ref_vh",
            Slot::NewVV => "new_vv",
            Slot::NewVH => "new_vh",
        })
    }
}

/// Finite dB samples of one segment, in acquisition order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesSegment {
    values: Vec<f64>,
}

impl SeriesSegment {
    /// Builds a segment, dropping NaN samples.
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        Self { values: values.into_iter().filter(|v| !v.is_nan()).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, v: f64) {
        if !v.is_nan() {
            self.values.push(v);
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
    }
}

/// Min, max, mean, median, std, kurtosis, skewness of a sample.
///
/// Population moments: `std = sqrt(m2)`, `skew = m3 / m2^1.5`,
/// `kurtosis = m4 / m2^2 - 3`. Skewness and kurtosis are 0 when `m2 == 0`.
/// Sums run over the sorted sample, so the result does not depend on input
/// order.
pub fn summarize(values: &[f64]) -> Result<[f64; STATS_PER_SEGMENT], FeatureError> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Err(FeatureError::EmptySegment);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in &v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    Ok([v[0], v[n - 1], mean, median, m2.sqrt(), kurt, skew])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn get(&self, slot: Slot, stat: Statistic) -> f64 {
        self.0[feature_index(slot, stat)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn feature_index(slot: Slot, stat: Statistic) -> usize {
    slot as usize * STATS_PER_SEGMENT + stat.position()
}

pub fn build_feature_vector(
    ref_vv: &SeriesSegment,
    ref_vh: &SeriesSegment,
    new_vv: &SeriesSegment,
    new_vh: &SeriesSegment,
) -> Result<FeatureVector, FeatureError> {
    let mut out = [0.0; FEATURE_LEN];
    for (slot, seg) in Slot::ALL.into_iter().zip([ref_vv, ref_vh, new_vv, new_vh]) {
        let stats = summarize(seg.values()).map_err(|_| FeatureError::EmptyNamedSegment(slot))?;
        let base = slot as usize * STATS_PER_SEGMENT;
        out[base..base + STATS_PER_SEGMENT].copy_from_slice(&stats);
    }
    Ok(FeatureVector(out))
}

/// Spatial support of the per-layer sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Window {
    #[default]
    #[serde(rename = "1x1")]
    Pixel,
    /// Mean of the finite values in the 3x3 neighbourhood; edge pixels use
    /// the neighbours that exist.
    #[serde(rename = "3x3")]
    Mean3x3,
}

impl FromStr for Window {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1x1" | "pixel" => Ok(Window::Pixel),
            "3x3" | "3x3-mean" | "mean3x3" => Ok(Window::Mean3x3),
            _ => Err(FeatureError::Unknown { kind: "window", value: s.into() }),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Pixel => "1x1",
            Window::Mean3x3 => "3x3",
        })
    }
}

/// Polarizations fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSelection {
    Vv,
    Vh,
    #[default]
    Both,
}

impl BandSelection {
    pub fn includes(self, p: Polarization) -> bool {
        match self {
            BandSelection::Both => true,
            BandSelection::Vv => p == Polarization::VV,
            BandSelection::Vh => p == Polarization::VH,
        }
    }
}

impl FromStr for BandSelection {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vv" => Ok(Self::Vv),
            "vh" => Ok(Self::Vh),
            "both" | "vv+vh" => Ok(Self::Both),
            _ => Err(FeatureError::Unknown { kind: "band selection", value: s.into() }),
        }
    }
}

impl fmt::Display for BandSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vv => "vv",
            Self::Vh => "vh",
            Self::Both => "both",
        })
    }
}

/// Subset of the 28 features a model may split on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub bands: BandSelection,
    pub stats: Vec<Statistic>,
}

impl Default for FeatureSubset {
    fn default() -> Self {
        Self { bands: BandSelection::Both, stats: Statistic::ALL.to_vec() }
    }
}

impl FeatureSubset {
    /// Parses `all` or a `+`-joined statistic list such as `mean+std`.
    pub fn parse_stats(s: &str) -> Result<Vec<Statistic>, FeatureError> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Statistic::ALL.to_vec());
        }
        let mut stats = s.split('+').map(str::parse).collect::<Result<Vec<Statistic>, _>>()?;
        stats.sort();
        stats.dedup();
        Ok(stats)
    }

    /// Allowed feature indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for slot in Slot::ALL {
            if !self.bands.includes(slot.polarization()) {
                continue;
            }
            for &stat in &self.stats {
                out.push(feature_index(slot, stat));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// The four segments of one (pixel, orbit, reference, assessment) tuple.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrbitSegments {
    pub ref_vv: SeriesSegment,
    pub ref_vh: SeriesSegment,
    pub new_vv: SeriesSegment,
    pub new_vh: SeriesSegment,
}

impl OrbitSegments {
    pub fn get(&self, slot: Slot) -> &SeriesSegment {
        match slot {
            Slot::RefVV => &self.ref_vv,
            Slot::RefVH => &self.ref_vh,
            Slot::NewVV => &self.new_vv,
            Slot::NewVH => &self.new_vh,
        }
    }

    fn get_mut(&mut self, slot: Slot) -> &mut SeriesSegment {
        match slot {
            Slot::RefVV => &mut self.ref_vv,
            Slot::RefVH => &mut self.ref_vh,
            Slot::NewVV => &mut self.new_vv,
            Slot::NewVH => &mut self.new_vh,
        }
    }

    pub fn is_complete(&self) -> bool {
        Slot::ALL.iter().all(|s| !self.get(*s).is_empty())
    }

    pub fn feature_vector(&self) -> Result<FeatureVector, FeatureError> {
        build_feature_vector(&self.ref_vv, &self.ref_vh, &self.new_vv, &self.new_vh)
    }
}

/// Layer indices feeding each segment for one orbit and interval pair.
/// Built once and reused for every pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub orbit: u32,
    slots: [Vec<usize>; SEGMENTS],
}

impl SegmentPlan {
    pub fn new(stack: &RasterStack, orbit: u32, reference: &TimeInterval, assessment: &TimeInterval) -> Self {
        let mut slots: [Vec<usize>; SEGMENTS] = Default::default();
        let mut order: Vec<usize> = (0..stack.layers.len()).filter(|&i| stack.layers[i].orbit == orbit).collect();
        order.sort_by_key(|&i| (stack.layers[i].timestamp, i));
        for i in order {
            let layer = &stack.layers[i];
            for slot in Slot::ALL {
                let interval = match slot {
                    Slot::RefVV | Slot::RefVH => reference,
                    Slot::NewVV | Slot::NewVH => assessment,
                };
                if slot.polarization() == layer.polarization && interval.contains(layer.timestamp) {
                    slots[slot as usize].push(i);
                }
            }
        }
        Self { orbit, slots }
    }

    pub fn layer_count(&self, slot: Slot) -> usize {
        self.slots[slot as usize].len()
    }

    /// True when every slot has at least one layer.
    pub fn is_usable(&self) -> bool {
        self.slots.iter().all(|s| !s.is_empty())
    }

    pub fn extract(&self, stack: &RasterStack, col: usize, row: usize, window: Window) -> OrbitSegments {
        let mut out = OrbitSegments::default();
        for slot in Slot::ALL {
            let seg = out.get_mut(slot);
            for &li in &self.slots[slot as usize] {
                seg.push(sample(stack, li, col, row, window));
            }
        }
        out
    }
}

fn sample(stack: &RasterStack, layer: usize, col: usize, row: usize, window: Window) -> f64 {
    let values = &stack.layers[layer].values;
    match window {
        Window::Pixel => values[row * stack.width + col] as f64,
        Window::Mean3x3 => {
            let (mut sum, mut n) = (0.0f64, 0u32);
            for r in row.saturating_sub(1)..=(row + 1).min(stack.height - 1) {
                for c in col.saturating_sub(1)..=(col + 1).min(stack.width - 1) {
                    let v = values[r * stack.width + c];
                    if !v.is_nan() {
                        sum += v as f64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        }
    }
}

/// Segments of pixel `(col, row)` for `orbit`. Empty segments are returned
/// as-is; the caller decides whether the tuple is usable.
pub fn extract_segments(
    stack: &RasterStack,
    pixel: (usize, usize),
    orbit: u32,
    reference: &TimeInterval,
    assessment: &TimeInterval,
    window: Window,
) -> OrbitSegments {
    SegmentPlan::new(stack, orbit, reference, assessment).extract(stack, pixel.0, pixel.1, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{GeoTransform, Layer, OrbitDirection};
    use crate::temporal::{interval, parse_date};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn summarize_one_to_five() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let expect = [1.0, 5.0, 3.0, 3.0, 1.414_213_562_373_095, -1.3, 0.0];
        for (a, b) in s.iter().zip(expect) {
            assert!(close(*a, b), "{s:?}");
        }
    }

    #[test]
    fn degenerate_segments() {
        assert_eq!(summarize(&[5.0, 5.0, 5.0]).unwrap(), [5.0, 5.0, 5.0, 5.0, 0.0, 0.0, 0.0]);
        assert_eq!(summarize(&[2.0]).unwrap(), [2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(summarize(&[]), Err(FeatureError::EmptySegment));
        assert_eq!(summarize(&[f64::NAN]), Err(FeatureError::EmptySegment));
    }

    #[test]
    fn even_median() {
        assert_eq!(summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap()[3], 2.5);
    }

    #[test]
    fn vector_layout() {
        let zero = SeriesSegment::new([0.0, 0.0, 0.0]);
        let fv = build_feature_vector(&zero, &zero, &zero, &zero).unwrap();
        assert_eq!(fv.0, [0.0; FEATURE_LEN]);

        let c = SeriesSegment::new([-7.0; 4]);
        let ramp = SeriesSegment::new([1.0, 2.0, 3.0, 4.0, 5.0]);
        let fv = build_feature_vector(&c, &c, &ramp, &c).unwrap();
        assert_eq!(&fv.0[14..21], &summarize(ramp.values()).unwrap());
        assert_eq!(fv.get(Slot::RefVV, Statistic::Mean), -7.0);
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let a = SeriesSegment::new([0.1, -3.7, 2.2, 9.9, -0.3, 0.7]);
        let b = SeriesSegment::new([9.9, 0.7, -0.3, 0.1, 2.2, -3.7]);
        let fa = build_feature_vector(&a, &a, &a, &a).unwrap();
        let fb = build_feature_vector(&b, &b, &b, &b).unwrap();
        assert_eq!(fa.0.map(f64::to_bits), fb.0.map(f64::to_bits));
    }

    #[test]
    fn empty_segment_named() {
        let s = SeriesSegment::new([1.0]);
        let e = SeriesSegment::default();
        assert_eq!(build_feature_vector(&s, &s, &s, &e), Err(FeatureError::EmptyNamedSegment(Slot::NewVH)));
    }

    fn stack(values: Vec<f32>, w: usize, h: usize, dates: &[&str]) -> RasterStack {
        let mut layers = Vec::new();
        for d in dates {
            for p in Polarization::BOTH {
                layers.push(Layer {
                    values: values.clone(),
                    timestamp: parse_date(d).unwrap(),
                    orbit: 44,
                    direction: OrbitDirection::Ascending,
                    polarization: p,
                });
            }
        }
        RasterStack {
            width: w,
            height: h,
            transform: GeoTransform { origin_x: 0.0, origin_y: 0.0, pixel_w: 10.0, pixel_h: -10.0, crs: "EPSG:32636".into() },
            layers,
        }
    }

    #[test]
    fn extraction_counts_layers_in_interval() {
        let s = stack(vec![-8.0; 4], 2, 2, &["2020-03-01", "2020-06-01", "2020-09-01", "2021-01-01", "2021-03-01"]);
        let segs = extract_segments(&s, (0, 0), 44, &interval(0).unwrap(), &interval(1).unwrap(), Window::Pixel);
        assert_eq!(segs.ref_vv.len(), 4);
        assert_eq!(segs.new_vh.len(), 1);
        let other = extract_segments(&s, (0, 0), 99, &interval(0).unwrap(), &interval(1).unwrap(), Window::Pixel);
        assert!(!other.is_complete());
    }

    #[test]
    fn corner_window_uses_four_neighbours() {
        let vals = vec![1.0, 2.0, 100.0, 3.0, 4.0, 100.0, 100.0, 100.0, 100.0];
        let s = stack(vals, 3, 3, &["2020-03-01"]);
        assert_eq!(sample(&s, 0, 0, 0, Window::Mean3x3), 2.5);
        assert_eq!(sample(&s, 0, 1, 1, Window::Mean3x3), (1.0 + 2.0 + 3.0 + 4.0 + 500.0) / 9.0);
    }

    #[test]
    fn nan_samples_dropped() {
        let s = stack(vec![f32::NAN, -5.0], 2, 1, &["2020-03-01", "2020-04-01"]);
        let segs = extract_segments(&s, (0, 0), 44, &interval(0).unwrap(), &interval(1).unwrap(), Window::Pixel);
        assert!(segs.ref_vv.is_empty());
        let segs = extract_segments(&s, (0, 0), 44, &interval(0).unwrap(), &interval(1).unwrap(), Window::Mean3x3);
        assert_eq!(segs.ref_vv.values(), &[-5.0, -5.0]);
    }

    #[test]
    fn subset_indices() {
        let all = FeatureSubset::default().indices();
        assert_eq!(all, (0..28).collect::<Vec<_>>());
        let vv_mean_std = FeatureSubset { bands: BandSelection::Vv, stats: FeatureSubset::parse_stats("mean+std").unwrap() };
        assert_eq!(vv_mean_std.indices(), vec![2, 4, 16, 18]);
        assert!(FeatureSubset::parse_stats("mean+ndvi").is_err());
    }
}
