//! Building-level damage likelihoods, the two-period-group decision rule and
//! regional / class roll-ups.
//!
//! A footprint's likelihood for a period is the mean of the pixels it
//! overlaps, weighted by exact intersection area (normalised to sum to 1).
//! A building is damaged at threshold `t` when some post-invasion period
//! reaches `t` while every pre-invasion period stays below it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geodata::{self, BuildingFootprint, GridSpec, PeriodMap, Region};
use crate::geometry::{Point, Polygon, Rect};
use crate::temporal::{POST_INVASION_PERIODS, PRE_INVASION_PERIODS};
use crate::workers;

/// Default decision threshold (90% target precision on the study test set).
pub const DEFAULT_THRESHOLD: f64 = 0.655;

/// Minimum footprint area considered, in square metres.
pub const MIN_AREA_M2: f64 = 50.0;

pub const UNASSIGNED_REGION: &str = "unassigned";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildingError {
    #[error("footprint does not overlap the grid")]
    NoOverlap,
    #[error("invalid building record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelWeight {
    pub col: usize,
    pub row: usize,
    pub weight: f64,
}

/// Area-fraction weights of every grid cell the footprint overlaps.
pub fn overlap_weights(polygons: &[Polygon], grid: &GridSpec) -> Result<Vec<PixelWeight>, BuildingError> {
    let pts: Vec<Point> = polygons.iter().flat_map(|p| p.exterior.iter().copied()).collect();
    if pts.is_empty() {
        return Err(BuildingError::NoOverlap);
    }
    let bbox = crate::geometry::bbox_of(&pts);
    let extent = grid.extent();
    if !bbox.intersects(&extent) {
        return Err(BuildingError::NoOverlap);
    }
    let t = &grid.transform;
    let (c0, r0) = t.crs_to_fractional(bbox.min_x, bbox.min_y);
    let (c1, r1) = t.crs_to_fractional(bbox.max_x, bbox.max_y);
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    let (col_lo, col_hi) = (clamp(c0.min(c1).floor(), grid.width), clamp(c0.max(c1).ceil(), grid.width));
    let (row_lo, row_hi) = (clamp(r0.min(r1).floor(), grid.height), clamp(r0.max(r1).ceil(), grid.height));

    let mut cells = Vec::new();
    let mut total = 0.0;
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            let cell: Rect = t.cell_rect(col, row);
            let a: f64 = polygons.iter().map(|p| p.clipped_area(&cell)).sum();
            if a > 0.0 {
                total += a;
                cells.push(PixelWeight { col, row, weight: a });
            }
        }
    }
    if total <= 0.0 {
        return Err(BuildingError::NoOverlap);
    }
    for c in &mut cells {
        c.weight /= total;
    }
    Ok(cells)
}

/// Weighted mean over the finite pixels, renormalising around nodata.
pub fn building_likelihood(weights: &[PixelWeight], map: &PeriodMap) -> Option<f64> {
    let (mut acc, mut wsum) = (0.0, 0.0);
    for w in weights {
        let v = map.get(w.col, w.row);
        if v.is_finite() {
            acc += w.weight * v as f64;
            wsum += w.weight;
        }
    }
    if wsum <= 0.0 {
        return None;
    }
    Some((acc / wsum).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictFlag {
    /// No pre-invasion likelihood; the pre-invasion clause was taken as met.
    NoPreInvasionPeriods,
    /// No post-invasion likelihood; verdict forced to 0.
    NoPostInvasionPeriods,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub damaged: bool,
    pub flag: Option<VerdictFlag>,
}

fn max_over(per_period: &BTreeMap<u8, f64>, range: std::ops::RangeInclusive<u8>) -> Option<f64> {
    per_period.range(range).map(|(_, v)| *v).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Damaged iff `max(post) >= t` and `max(pre) < t`.
pub fn final_verdict(per_period: &BTreeMap<u8, f64>, t: f64) -> Verdict {
    verdict_over(per_period, t, *POST_INVASION_PERIODS.end())
}

/// Verdict using post-invasion periods up to `last_period` only; used for
/// cumulative per-period roll-ups.
pub fn verdict_over(per_period: &BTreeMap<u8, f64>, t: f64, last_period: u8) -> Verdict {
    let post_range = *POST_INVASION_PERIODS.start()..=last_period.min(*POST_INVASION_PERIODS.end());
    let Some(post) = max_over(per_period, post_range) else {
        return Verdict { damaged: false, flag: Some(VerdictFlag::NoPostInvasionPeriods) };
    };
    match max_over(per_period, PRE_INVASION_PERIODS) {
        Some(pre) => Verdict { damaged: post >= t && pre < t, flag: None },
        None => Verdict { damaged: post >= t, flag: Some(VerdictFlag::NoPreInvasionPeriods) },
    }
}

/// Stored per-building result: likelihoods per period, not verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingDamage {
    pub id: String,
    /// Period index to likelihood; `None` when every overlapped pixel was nodata.
    pub likelihoods: BTreeMap<u8, Option<f64>>,
    pub centroid: Point,
    pub area_m2: f64,
    pub osm_class: Option<String>,
}

impl BuildingDamage {
    pub fn defined(&self) -> BTreeMap<u8, f64> {
        self.likelihoods.iter().filter_map(|(k, v)| v.map(|v| (*k, v))).collect()
    }

    pub fn verdict(&self, t: f64) -> Verdict {
        final_verdict(&self.defined(), t)
    }

    pub fn is_damaged(&self, t: f64) -> bool {
        self.verdict(t).damaged
    }
}

/// Likelihoods of every footprint for every map. Footprints outside the
/// grid are skipped and returned separately by id.
pub fn assess_buildings(footprints: &[BuildingFootprint], maps: &[PeriodMap], threads: usize) -> (Vec<BuildingDamage>, Vec<String>) {
    let Some(first) = maps.first() else {
        return (Vec::new(), footprints.iter().map(|f| f.id.clone()).collect());
    };
    let grid = first.grid();
    let results = workers::map_indexed(footprints.len(), threads, |i| {
        let fp = &footprints[i];
        let weights = overlap_weights(&fp.polygons, &grid).ok()?;
        let likelihoods = maps.iter().map(|m| (m.period_index, building_likelihood(&weights, m))).collect();
        Some(BuildingDamage {
            id: fp.id.clone(),
            likelihoods,
            centroid: fp.centroid().unwrap_or([f64::NAN, f64::NAN]),
            area_m2: fp.area_m2,
            osm_class: fp.osm_class.clone(),
        })
    });
    let mut assessed = Vec::new();
    let mut outside = Vec::new();
    for (fp, r) in footprints.iter().zip(results) {
        match r {
            Some(b) => assessed.push(b),
            None => outside.push(fp.id.clone()),
        }
    }
    (assessed, outside)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRollup {
    pub region_id: String,
    pub name: String,
    pub n_buildings: usize,
    pub n_damaged: usize,
    pub pct_damaged: f64,
}

fn pct(d: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * d as f64 / n as f64
    }
}

/// Index of the region containing `p`; the lowest id wins on shared borders.
pub fn assign_region(regions: &[Region], p: Point) -> Option<usize> {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| regions[a].id.cmp(&regions[b].id));
    order.into_iter().find(|&i| regions[i].contains(p))
}

/// Counts per region (sorted by region id), plus an `unassigned` bucket
/// when some centroid falls outside every region.
pub fn rollup(buildings: &[BuildingDamage], regions: &[Region], t: f64) -> Vec<RegionRollup> {
    rollup_with(buildings, regions, |b| b.is_damaged(t))
}

/// Cumulative roll-up: damage counted with post-invasion periods up to `last_period`.
pub fn rollup_until(buildings: &[BuildingDamage], regions: &[Region], t: f64, last_period: u8) -> Vec<RegionRollup> {
    rollup_with(buildings, regions, |b| verdict_over(&b.defined(), t, last_period).damaged)
}

fn rollup_with(buildings: &[BuildingDamage], regions: &[Region], damaged: impl Fn(&BuildingDamage) -> bool) -> Vec<RegionRollup> {
    let mut counts = vec![(0usize, 0usize); regions.len()];
    let mut unassigned = (0usize, 0usize);
    for b in buildings {
        let slot = match assign_region(regions, b.centroid) {
            Some(i) => &mut counts[i],
            None => &mut unassigned,
        };
        slot.0 += 1;
        if damaged(b) {
            slot.1 += 1;
        }
    }
    let mut out: Vec<RegionRollup> = regions
        .iter()
        .zip(counts)
        .map(|(r, (n, d))| RegionRollup {
            region_id: r.id.clone(),
            name: r.name.clone(),
            n_buildings: n,
            n_damaged: d,
            pct_damaged: pct(d, n),
        })
        .collect();
    out.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    if unassigned.0 > 0 {
        out.push(RegionRollup {
            region_id: UNASSIGNED_REGION.into(),
            name: UNASSIGNED_REGION.into(),
            n_buildings: unassigned.0,
            n_damaged: unassigned.1,
            pct_damaged: pct(unassigned.1, unassigned.0),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub n_buildings: usize,
    pub n_damaged: usize,
}

/// Damaged counts per building class, most damaged first. Buildings without
/// a class are reported as `unclassified`.
pub fn class_rollup(buildings: &[BuildingDamage], t: f64) -> Vec<ClassCount> {
    let mut map: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for b in buildings {
        let class = b.osm_class.clone().unwrap_or_else(|| "unclassified".into());
        let e = map.entry(class).or_default();
        e.0 += 1;
        if b.is_damaged(t) {
            e.1 += 1;
        }
    }
    let mut out: Vec<ClassCount> =
        map.into_iter().map(|(class, (n, d))| ClassCount { class, n_buildings: n, n_damaged: d }).collect();
    out.sort_by(|a, b| b.n_damaged.cmp(&a.n_damaged).then_with(|| a.class.cmp(&b.class)));
    out
}

pub fn rollup_csv(rows: &[RegionRollup]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["region_id", "name", "n_buildings", "n_damaged", "pct"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.region_id.clone(),
            r.name.clone(),
            r.n_buildings.to_string(),
            r.n_damaged.to_string(),
            format!("{:.2}", r.pct_damaged),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn class_csv(rows: &[ClassCount]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "n_buildings", "n_damaged"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.class.clone(), r.n_buildings.to_string(), r.n_damaged.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn period_key(n: u8) -> String {
    format!("y_T{n}")
}

/// Building results as GeoJSON. Each feature carries `y_T1..y_T12`
/// (null when unavailable), the verdict at `t` and `t` itself.
pub fn buildings_to_geojson(buildings: &[BuildingDamage], footprints: &[BuildingFootprint], t: f64) -> Value {
    let geoms: BTreeMap<&str, &BuildingFootprint> = footprints.iter().map(|f| (f.id.as_str(), f)).collect();
    let features = buildings
        .iter()
        .map(|b| {
            let mut props = serde_json::Map::new();
            props.insert("id".into(), json!(b.id));
            for n in 1..=12u8 {
                props.insert(period_key(n), json!(b.likelihoods.get(&n).copied().flatten()));
            }
            let v = b.verdict(t);
            props.insert("final".into(), json!(v.damaged as u8));
            props.insert("threshold".into(), json!(t));
            props.insert("verdict_flag".into(), json!(v.flag));
            props.insert("area_m2".into(), json!(b.area_m2));
            props.insert("osm_class".into(), json!(b.osm_class));
            let geometry = match geoms.get(b.id.as_str()) {
                Some(f) => geodata::polygons_to_geometry(&f.polygons),
                None => json!({"type": "Point", "coordinates": [b.centroid[0], b.centroid[1]]}),
            };
            json!({"type": "Feature", "geometry": geometry, "properties": Value::Object(props)})
        })
        .collect();
    geodata::feature_collection(features)
}

/// Reads building results written by [`buildings_to_geojson`].
pub fn parse_buildings_geojson(text: &str) -> Result<Vec<BuildingDamage>, BuildingError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| BuildingError::BadRecord(e.to_string()))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| BuildingError::BadRecord("missing features array".into()))?;
    let polys_text = |f: &Value| -> Option<Vec<Polygon>> {
        let fc = json!({"type": "FeatureCollection", "features": [f]});
        let r = geodata::parse_regions(&fc.to_string()).ok()?;
        r.items.into_iter().next().map(|r| r.polygons)
    };
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").ok_or_else(|| BuildingError::BadRecord(format!("feature {i} has no properties")))?;
        let id = match props.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(BuildingError::BadRecord(format!("feature {i} has no id"))),
        };
        let mut likelihoods = BTreeMap::new();
        for n in 1..=12u8 {
            match props.get(period_key(n)) {
                Some(Value::Null) => {
                    likelihoods.insert(n, None);
                }
                Some(v) => {
                    let x = v.as_f64().ok_or_else(|| BuildingError::BadRecord(format!("{id}: non-numeric y_T{n}")))?;
                    likelihoods.insert(n, Some(x));
                }
                None => {}
            }
        }
        let centroid = match f.get("geometry").and_then(|g| g.get("type")).and_then(Value::as_str) {
            Some("Point") => {
                let c = &f["geometry"]["coordinates"];
                [c[0].as_f64().unwrap_or(f64::NAN), c[1].as_f64().unwrap_or(f64::NAN)]
            }
            _ => polys_text(f).and_then(|p| crate::geometry::centroid(&p)).unwrap_or([f64::NAN, f64::NAN]),
        };
        out.push(BuildingDamage {
            id,
            likelihoods,
            centroid,
            area_m2: props.get("area_m2").and_then(Value::as_f64).unwrap_or(f64::NAN),
            osm_class: props.get("osm_class").and_then(Value::as_str).map(String::from),
        });
    }
    Ok(out)
}
