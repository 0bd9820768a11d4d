//! Seeded synthetic scenarios with known ground truth.
//!
//! Every pixel, orbit and polarization gets its own baseline; the series is
//! baseline + annual sinusoid + Gaussian noise (all in dB), plus the event
//! signature after the event date, scaled by the share of the pixel the
//! damaged footprint covers. Each pixel draws from its own PRNG substream so
//! output is identical for any worker count.

use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{
    self, BuildingFootprint, DamageClass, GeoDataError, GeoTransform, LabelPoint, Layer, OrbitDirection, Polarization,
    RasterStack, Region, DB_RANGE,
};
use crate::geometry::{Polygon, Rect};
use crate::temporal::{invasion_date, IntervalCalendar};
use crate::workers;

pub const PRESET_NAMES: [&str; 3] = ["clean-steps", "seasonal-confounder", "noise-free"];

const PRESETS: [(&str, &str); 3] = [
    ("clean-steps", include_str!("../presets/clean-steps.toml")),
    ("seasonal-confounder", include_str!("../presets/seasonal-confounder.toml")),
    ("noise-free", include_str!("../presets/noise-free.toml")),
];

const ORBIT_IDS: [u32; 4] = [14, 43, 87, 116];
const ORIGIN: (f64, f64) = (500_000.0, 5_600_000.0);
const CRS: &str = "EPSG:32636";
const OSM_CLASSES: [&str; 4] = ["apartments", "house", "industrial", "school"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset '{0}' (available: clean-steps, seasonal-confounder, noise-free)")]
    UnknownPreset(String),
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] GeoDataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation of the additive noise, dB.
    pub speckle_sigma_db: f64,
    /// Amplitude of the annual sinusoid, dB.
    pub seasonal_amplitude_db: f64,
    /// Per-pixel phase offsets are drawn from [-jitter, jitter], radians.
    pub seasonal_phase_jitter: f64,
    /// Probability that a single acquisition is missing at a pixel.
    pub gap_probability: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { speckle_sigma_db: 1.0, seasonal_amplitude_db: 0.0, seasonal_phase_jitter: 0.5, gap_probability: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Layout {
    /// Lattice spacing in pixels; one candidate building per lattice cell.
    pub spacing_px: usize,
    pub min_size_px: f64,
    pub max_size_px: f64,
    /// Probability that a lattice cell holds a building.
    pub occupancy: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self { spacing_px: 7, min_size_px: 2.0, max_size_px: 4.5, occupancy: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSign {
    /// Independent random sign per event and orbit.
    Random,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignatureMix {
    pub step: f64,
    pub burst: f64,
    pub none: f64,
}

impl Default for SignatureMix {
    fn default() -> Self {
        Self { step: 1.0, burst: 0.0, none: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamageModel {
    /// Share of buildings that receive an event.
    pub fraction: f64,
    pub event_start: NaiveDate,
    pub event_end: NaiveDate,
    /// Days between an event and its annotation.
    pub label_lag_days: u64,
    pub signatures: SignatureMix,
    pub step_db: f64,
    pub step_sign: StepSign,
    pub burst_sigma_db: f64,
}

impl Default for DamageModel {
    fn default() -> Self {
        Self {
            fraction: 0.4,
            event_start: NaiveDate::from_ymd_opt(2022, 2, 25).expect("valid date"),
            event_end: NaiveDate::from_ymd_opt(2022, 10, 31).expect("valid date"),
            label_lag_days: 30,
            signatures: SignatureMix::default(),
            step_db: 3.0,
            step_sign: StepSign::Random,
            burst_sigma_db: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signature {
    /// Shift of `delta_db` on every orbit.
    Step { delta_db: f64 },
    /// Extra Gaussian noise with this standard deviation.
    Burst { sigma_db: f64 },
    /// Damage that leaves no trace in the backscatter.
    None,
}

/// An explicitly placed event, on a generated building or a pixel set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    #[serde(default)]
    pub building: Option<String>,
    #[serde(default)]
    pub pixels: Vec<[usize; 2]>,
    pub date: NaiveDate,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub pixel_size_m: f64,
    pub n_orbits: usize,
    pub revisit_days: u64,
    pub noise: NoiseModel,
    pub layout: Layout,
    pub damage: DamageModel,
    pub events: Vec<EventSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            seed: 0,
            width: 64,
            height: 64,
            pixel_size_m: 10.0,
            n_orbits: 2,
            revisit_days: 12,
            noise: NoiseModel::default(),
            layout: Layout::default(),
            damage: DamageModel::default(),
            events: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| SynthError::UnknownPreset(name.into()))?;
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SynthError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(2..=4).contains(&self.n_orbits) {
            return bad(format!("n_orbits must be 2..=4, got {}", self.n_orbits));
        }
        if self.revisit_days != 6 && self.revisit_days != 12 {
            return bad(format!("revisit_days must be 6 or 12, got {}", self.revisit_days));
        }
        if self.width < 4 || self.height < 4 {
            return bad("grid must be at least 4x4 pixels".into());
        }
        if !(self.pixel_size_m > 0.0) {
            return bad("pixel_size_m must be positive".into());
        }
        let n = &self.noise;
        if !(n.speckle_sigma_db >= 0.0 && n.seasonal_amplitude_db >= 0.0 && n.seasonal_phase_jitter >= 0.0) {
            return bad("noise parameters must be non-negative".into());
        }
        if !(0.0..1.0).contains(&n.gap_probability) {
            return bad("gap_probability must be in [0, 1)".into());
        }
        let l = &self.layout;
        if !(l.min_size_px >= 2.0 && l.max_size_px >= l.min_size_px) {
            return bad("building sizes need 2 <= min_size_px <= max_size_px".into());
        }
        if (l.spacing_px as f64) < l.max_size_px + 1.0 {
            return bad("spacing_px must exceed max_size_px by at least one pixel".into());
        }
        if !(0.0..=1.0).contains(&l.occupancy) {
            return bad("occupancy must be in [0, 1]".into());
        }
        let d = &self.damage;
        if !(0.0..=1.0).contains(&d.fraction) {
            return bad("damage fraction must be in [0, 1]".into());
        }
        let s = &d.signatures;
        if !(s.step >= 0.0 && s.burst >= 0.0 && s.none >= 0.0 && s.step + s.burst + s.none > 0.0) {
            return bad("signature weights must be non-negative and not all zero".into());
        }
        if !(d.burst_sigma_db >= 0.0) {
            return bad("burst_sigma_db must be non-negative".into());
        }
        if d.event_end < d.event_start {
            return bad("event_end precedes event_start".into());
        }
        let calendar = IntervalCalendar::default();
        let last = calendar.last_day();
        let check_date = |date: NaiveDate, what: &str| -> Result<(), SynthError> {
            if date < invasion_date() {
                return Err(SynthError::Invalid(format!("{what} {date} precedes the invasion date {}", invasion_date())));
            }
            if date > last {
                return Err(SynthError::Invalid(format!("{what} {date} is after the last assessment day {last}")));
            }
            Ok(())
        };
        check_date(d.event_start, "event_start")?;
        check_date(d.event_end, "event_end")?;
        for (i, e) in self.events.iter().enumerate() {
            check_date(e.date, &format!("event {i} date"))?;
            if e.building.is_none() && e.pixels.is_empty() {
                return bad(format!("event {i} names neither a building nor pixels"));
            }
            if let Some(p) = e.pixels.iter().find(|p| p[0] >= self.width || p[1] >= self.height) {
                return bad(format!("event {i} pixel {p:?} is outside the grid"));
            }
        }
        Ok(())
    }

    pub fn transform(&self) -> GeoTransform {
        GeoTransform {
            origin_x: ORIGIN.0,
            origin_y: ORIGIN.1,
            pixel_w: self.pixel_size_m,
            pixel_h: -self.pixel_size_m,
            crs: CRS.into(),
        }
    }

    /// Acquisition dates per orbit, staggered across the revisit cycle.
    pub fn acquisitions(&self) -> Vec<(usize, NaiveDate)> {
        let calendar = IntervalCalendar::default();
        let mut out = Vec::new();
        for k in 0..self.n_orbits {
            let offset = k as u64 * self.revisit_days / self.n_orbits as u64;
            let mut d = calendar.first_day() + Days::new(offset);
            while d <= calendar.last_day() {
                out.push((k, d));
                d = d + Days::new(self.revisit_days);
            }
        }
        out.sort_by_key(|&(k, d)| (d, k));
        out
    }
}

/// Ground truth for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    pub building_id: Option<String>,
    pub label_id: String,
    pub date: NaiveDate,
    pub unosat_date: NaiveDate,
    pub signature: Signature,
    /// Applied step per orbit (empty for other signatures).
    pub orbit_deltas: Vec<f64>,
    /// Affected pixels with the covered fraction of each.
    pub pixels: Vec<([usize; 2], f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub scenario: String,
    pub seed: u64,
    pub events: Vec<EventTruth>,
    pub damaged_buildings: Vec<String>,
    pub intact_buildings: Vec<String>,
}

impl TruthTable {
    /// Date from which the pixel carries damage, if any.
    pub fn onset(&self, col: usize, row: usize) -> Option<NaiveDate> {
        self.events
            .iter()
            .filter(|e| e.pixels.iter().any(|(p, _)| *p == [col, row]))
            .map(|e| e.date)
            .min()
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub scenario: Scenario,
    pub stack: RasterStack,
    pub labels: Vec<LabelPoint>,
    pub footprints: Vec<BuildingFootprint>,
    pub regions: Vec<Region>,
    pub truth: TruthTable,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = stream.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(seed ^ z ^ (z >> 31))
}

const LAYOUT_STREAM: u64 = 1 << 40;
const DAMAGE_STREAM: u64 = (1 << 40) + 1;

struct PixelEvent {
    event: usize,
    coverage: f64,
}

fn layout_buildings(s: &Scenario, t: &GeoTransform) -> Vec<BuildingFootprint> {
    let mut rng = substream(s.seed, LAYOUT_STREAM);
    let l = &s.layout;
    let mut out = Vec::new();
    for cy in 0..s.height / l.spacing_px {
        for cx in 0..s.width / l.spacing_px {
            if rng.random::<f64>() >= l.occupancy {
                continue;
            }
            let w = rng.random_range(l.min_size_px..=l.max_size_px);
            let h = rng.random_range(l.min_size_px..=l.max_size_px);
            let slack_x = l.spacing_px as f64 - w - 1.0;
            let slack_y = l.spacing_px as f64 - h - 1.0;
            let px = (cx * l.spacing_px) as f64 + 0.5 + rng.random::<f64>() * slack_x;
            let py = (cy * l.spacing_px) as f64 + 0.5 + rng.random::<f64>() * slack_y;
            let x0 = t.origin_x + px * t.pixel_w;
            let x1 = t.origin_x + (px + w) * t.pixel_w;
            let y0 = t.origin_y + py * t.pixel_h;
            let y1 = t.origin_y + (py + h) * t.pixel_h;
            let poly = Polygon::rect(Rect::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)));
            let class = OSM_CLASSES[rng.random_range(0..OSM_CLASSES.len())];
            out.push(BuildingFootprint {
                id: format!("b{:04}", out.len() + 1),
                area_m2: poly.area(),
                polygons: vec![poly],
                osm_class: Some(class.into()),
            });
        }
    }
    out
}

fn covered_pixels(fp: &BuildingFootprint, s: &Scenario, t: &GeoTransform) -> Vec<([usize; 2], f64)> {
    let cell_area = (t.pixel_w * t.pixel_h).abs();
    let mut out = Vec::new();
    for row in 0..s.height {
        for col in 0..s.width {
            let cell = t.cell_rect(col, row);
            if !cell.intersects(&fp.bbox()) {
                continue;
            }
            let a: f64 = fp.polygons.iter().map(|p| p.clipped_area(&cell)).sum();
            if a > 0.0 {
                out.push(([col, row], (a / cell_area).min(1.0)));
            }
        }
    }
    out
}

fn draw_date(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate) -> NaiveDate {
    let span = (end - start).num_days().max(0) as u64;
    start + Days::new(rng.random_range(0..=span))
}

fn draw_signature(rng: &mut ChaCha8Rng, d: &DamageModel) -> Signature {
    let m = &d.signatures;
    let u = rng.random::<f64>() * (m.step + m.burst + m.none);
    if u < m.step {
        Signature::Step { delta_db: d.step_db }
    } else if u < m.step + m.burst {
        Signature::Burst { sigma_db: d.burst_sigma_db }
    } else {
        Signature::None
    }
}

fn orbit_deltas(rng: &mut ChaCha8Rng, sig: Signature, n_orbits: usize, sign: StepSign) -> Vec<f64> {
    let Signature::Step { delta_db } = sig else {
        return Vec::new();
    };
    (0..n_orbits)
        .map(|_| match sign {
            StepSign::Positive => delta_db.abs(),
            StepSign::Negative => -delta_db.abs(),
            StepSign::Random => {
                if rng.random::<bool>() {
                    delta_db
                } else {
                    -delta_db
                }
            }
        })
        .collect()
}

/// Pixel whose centre is nearest the footprint centroid among the most covered ones.
fn label_pixel(pixels: &[([usize; 2], f64)], t: &GeoTransform, centre: [f64; 2]) -> [usize; 2] {
    let best = pixels.iter().map(|p| p.1).fold(0.0, f64::max);
    pixels
        .iter()
        .filter(|p| p.1 >= best)
        .min_by(|a, b| {
            let da = dist2(t.pixel_center(a.0[0], a.0[1]), centre);
            let db = dist2(t.pixel_center(b.0[0], b.0[1]), centre);
            da.total_cmp(&db).then(a.0.cmp(&b.0))
        })
        .map(|p| p.0)
        .expect("footprint covers at least one pixel")
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn quadrant_regions(s: &Scenario, t: &GeoTransform) -> Vec<Region> {
    let (w, h) = (s.width as f64 * t.pixel_w, s.height as f64 * t.pixel_h.abs());
    let (x0, y1) = (t.origin_x, t.origin_y);
    let (xm, ym, x1, y0) = (x0 + w / 2.0, y1 - h / 2.0, x0 + w, y1 - h);
    [
        ("q1", "north-west", Rect::new(x0, ym, xm, y1)),
        ("q2", "north-east", Rect::new(xm, ym, x1, y1)),
        ("q3", "south-west", Rect::new(x0, y0, xm, ym)),
        ("q4", "south-east", Rect::new(xm, y0, x1, ym)),
    ]
    .into_iter()
    .map(|(id, name, r)| Region { id: id.into(), name: name.into(), polygons: vec![Polygon::rect(r)] })
    .collect()
}

pub fn generate(scenario: &Scenario) -> Result<Synthetic, SynthError> {
    generate_with_threads(scenario, workers::default_threads())
}

pub fn generate_with_threads(scenario: &Scenario, threads: usize) -> Result<Synthetic, SynthError> {
    scenario.validate()?;
    let s = scenario;
    let t = s.transform();
    let footprints = layout_buildings(s, &t);
    let mut rng = substream(s.seed, DAMAGE_STREAM);

    // Which buildings are damaged, then the explicit events.
    let mut order: Vec<usize> = (0..footprints.len()).collect();
    order.shuffle(&mut rng);
    let n_damaged = (s.damage.fraction * footprints.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = order[..n_damaged.min(footprints.len())].to_vec();
    chosen.sort_unstable();

    let mut events: Vec<EventTruth> = Vec::new();
    let mut damaged_ids: Vec<String> = Vec::new();
    for &b in &chosen {
        let date = draw_date(&mut rng, s.damage.event_start, s.damage.event_end);
        let sig = draw_signature(&mut rng, &s.damage);
        let deltas = orbit_deltas(&mut rng, sig, s.n_orbits, s.damage.step_sign);
        events.push(EventTruth {
            building_id: Some(footprints[b].id.clone()),
            label_id: String::new(),
            date,
            unosat_date: date + Days::new(s.damage.label_lag_days),
            signature: sig,
            orbit_deltas: deltas,
            pixels: covered_pixels(&footprints[b], s, &t),
        });
        damaged_ids.push(footprints[b].id.clone());
    }
    for (i, e) in s.events.iter().enumerate() {
        let mut pixels: Vec<([usize; 2], f64)> = e.pixels.iter().map(|p| (*p, 1.0)).collect();
        if let Some(id) = &e.building {
            let fp = footprints
                .iter()
                .find(|f| &f.id == id)
                .ok_or_else(|| SynthError::Invalid(format!("event {i} names unknown building '{id}'")))?;
            pixels.extend(covered_pixels(fp, s, &t));
            if !damaged_ids.contains(id) {
                damaged_ids.push(id.clone());
            }
        }
        let deltas = match e.signature {
            Signature::Step { delta_db } => vec![delta_db; s.n_orbits],
            _ => Vec::new(),
        };
        events.push(EventTruth {
            building_id: e.building.clone(),
            label_id: String::new(),
            date: e.date,
            unosat_date: e.date + Days::new(s.damage.label_lag_days),
            signature: e.signature,
            orbit_deltas: deltas,
            pixels,
        });
    }
    damaged_ids.sort();
    let intact_ids: Vec<String> =
        footprints.iter().map(|f| f.id.clone()).filter(|id| damaged_ids.binary_search(id).is_err()).collect();
    if events.is_empty() || intact_ids.is_empty() {
        return Err(SynthError::Invalid(format!(
            "scenario yields {} damaged and {} intact buildings; both populations must be nonempty",
            events.len(),
            intact_ids.len()
        )));
    }

    // Labels: one per event, at the centre of its best-covered pixel.
    let mut labels = Vec::with_capacity(events.len());
    for (i, e) in events.iter_mut().enumerate() {
        let centre = match &e.building_id {
            Some(id) => footprints.iter().find(|f| &f.id == id).and_then(|f| f.centroid()).expect("known building"),
            None => t.pixel_center(e.pixels[0].0[0], e.pixels[0].0[1]),
        };
        let [col, row] = label_pixel(&e.pixels, &t, centre);
        let [x, y] = t.pixel_center(col, row);
        e.label_id = format!("L{:04}", i + 1);
        labels.push(LabelPoint {
            id: e.label_id.clone(),
            x,
            y,
            damage_class: if rng.random::<bool>() { DamageClass::Destroyed } else { DamageClass::SeverelyDamaged },
            unosat_date: e.unosat_date,
            aoi: s.name.clone(),
        });
    }

    let stack = synthesize_stack(s, &t, &events, threads);
    let truth = TruthTable {
        scenario: s.name.clone(),
        seed: s.seed,
        events,
        damaged_buildings: damaged_ids,
        intact_buildings: intact_ids,
    };
    Ok(Synthetic { scenario: s.clone(), stack, labels, footprints, regions: quadrant_regions(s, &t), truth })
}

fn synthesize_stack(s: &Scenario, t: &GeoTransform, events: &[EventTruth], threads: usize) -> RasterStack {
    let acquisitions = s.acquisitions();
    let n_layers = acquisitions.len() * 2;
    let mut per_pixel: Vec<Vec<PixelEvent>> = (0..s.width * s.height).map(|_| Vec::new()).collect();
    for (i, e) in events.iter().enumerate() {
        for &([c, r], coverage) in &e.pixels {
            per_pixel[r * s.width + c].push(PixelEvent { event: i, coverage });
        }
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let two_pi_year = std::f64::consts::TAU / 365.25;

    let rows = workers::map_indexed(s.height, threads, |row| {
        let mut out = vec![0f32; s.width * n_layers];
        for col in 0..s.width {
            let idx = row * s.width + col;
            let mut rng = substream(s.seed, idx as u64);
            let base: Vec<[f64; 2]> = (0..s.n_orbits)
                .map(|_| [-9.0 + rng.random_range(-3.0..3.0), -16.0 + rng.random_range(-3.0..3.0)])
                .collect();
            let phase = s.noise.seasonal_phase_jitter * rng.random_range(-1.0..=1.0);
            for (a, &(k, date)) in acquisitions.iter().enumerate() {
                let season = s.noise.seasonal_amplitude_db * (two_pi_year * date.ordinal0() as f64 + phase).sin();
                for pol in 0..2 {
                    let mut v = base[k][pol] + season + s.noise.speckle_sigma_db * noise.sample(&mut rng);
                    for pe in &per_pixel[idx] {
                        let e = &events[pe.event];
                        if date <= e.date {
                            continue;
                        }
                        match e.signature {
                            Signature::Step { .. } => v += pe.coverage * e.orbit_deltas[k],
                            Signature::Burst { sigma_db } => v += pe.coverage * sigma_db * noise.sample(&mut rng),
                            Signature::None => {}
                        }
                    }
                    let gap = s.noise.gap_probability > 0.0 && rng.random::<f64>() < s.noise.gap_probability;
                    out[col * n_layers + a * 2 + pol] =
                        if gap { f32::NAN } else { (v as f32).clamp(DB_RANGE.0, DB_RANGE.1) };
                }
            }
        }
        out
    });

    let mut layers: Vec<Layer> = acquisitions
        .iter()
        .flat_map(|&(k, date)| {
            [Polarization::VV, Polarization::VH].map(|polarization| Layer {
                values: vec![0.0; s.width * s.height],
                timestamp: date,
                orbit: ORBIT_IDS[k],
                direction: if k % 2 == 0 { OrbitDirection::Ascending } else { OrbitDirection::Descending },
                polarization,
            })
        })
        .collect();
    for (row, data) in rows.into_iter().enumerate() {
        for col in 0..s.width {
            let px = &data[col * n_layers..(col + 1) * n_layers];
            for (l, v) in px.iter().enumerate() {
                layers[l].values[row * s.width + col] = *v;
            }
        }
    }
    RasterStack { width: s.width, height: s.height, transform: t.clone(), layers }
}

pub const STACK_DIR: &str = "stack";
pub const LABELS_FILE: &str = "labels.geojson";
pub const FOOTPRINTS_FILE: &str = "footprints.geojson";
pub const REGIONS_FILE: &str = "regions.geojson";
pub const TRUTH_FILE: &str = "truth.json";
pub const SCENARIO_FILE: &str = "scenario.toml";

impl Synthetic {
    /// Writes the stack bundle, vector layers, truth table and scenario config.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        geodata::write_stack(&self.stack, dir.join(STACK_DIR))?;
        geodata::write_json(dir.join(LABELS_FILE), &geodata::labels_to_geojson(&self.labels))?;
        geodata::write_json(dir.join(FOOTPRINTS_FILE), &geodata::footprints_to_geojson(&self.footprints))?;
        geodata::write_json(dir.join(REGIONS_FILE), &geodata::regions_to_geojson(&self.regions))?;
        geodata::write_json(dir.join(TRUTH_FILE), &serde_json::to_value(&self.truth).expect("truth serializes"))?;
        let path = dir.join(SCENARIO_FILE);
        std::fs::write(&path, self.scenario.to_toml()).map_err(|source| GeoDataError::Io { path, source })?;
        Ok(())
    }
}
