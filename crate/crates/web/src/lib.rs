//! In-browser demo over a synthetic scene. `Demo::new` generates the scene,
//! trains a small forest and infers every period once; the remaining calls
//! only read the cached maps, so the threshold slider and pixel inspector
//! stay interactive.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sar_damage::buildings::{assess_buildings, BuildingDamage, DEFAULT_THRESHOLD};
use sar_damage::geodata::BuildingFootprint;
use sar_damage::inference::{infer_map, pwtt_maps, InferenceJob};
use sar_damage::pipeline::{train_forest, TrainingOptions};
use sar_damage::synthgen::{generate, Scenario, Synthetic};
use sar_damage::temporal::{format_date, IntervalCalendar};
use sar_damage::{ForestConfig, PeriodMap};

pub const PWTT_CUTOFF: f64 = 1.63;
const TRAIN_PERIODS: std::ops::RangeInclusive<u8> = 1..=8;

#[wasm_bindgen]
pub struct Demo {
    scene: Synthetic,
    forest: Vec<PeriodMap>,
    pwtt: Vec<PeriodMap>,
    buildings: Vec<BuildingDamage>,
}

#[wasm_bindgen]
impl Demo {
    /// Square scene of `size` pixels from a named preset.
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, seed: u64, size: usize, trees: usize) -> Result<Demo, String> {
        let base = Scenario::preset(preset).map_err(|e| e.to_string())?;
        let scenario = Scenario { width: size, height: size, ..base.with_seed(seed) };
        scenario.validate().map_err(|e| e.to_string())?;
        let scene = generate(&scenario).map_err(|e| e.to_string())?;
        let opts = TrainingOptions { periods: TRAIN_PERIODS.collect(), ..TrainingOptions::default() };
        let config = ForestConfig { n_trees: trees.max(1), seed, ..ForestConfig::default() };
        let model = train_forest(&scene.stack, &scene.labels, &opts, &config).map_err(|e| e.to_string())?;
        let job = InferenceJob::default();
        let forest = infer_map(&scene.stack, &model, &job).map_err(|e| e.to_string())?;
        let pwtt = pwtt_maps(&scene.stack, &job).map_err(|e| e.to_string())?;
        let (buildings, _) = assess_buildings(&scene.footprints, &forest, 1);
        Ok(Demo { scene, forest, pwtt, buildings })
    }

    pub fn width(&self) -> usize {
        self.scene.stack.width
    }

    pub fn height(&self) -> usize {
        self.scene.stack.height
    }

    pub fn default_threshold() -> f64 {
        DEFAULT_THRESHOLD
    }

    /// RGBA pixels for one period. `method` is "forest" (probability) or
    /// "pwtt" (t statistic, full colour at twice the cutoff). Nodata is
    /// transparent.
    pub fn heatmap(&self, period: u8, method: &str) -> Result<Vec<u8>, String> {
        let (maps, scale) = match method {
            "forest" => (&self.forest, 1.0),
            "pwtt" => (&self.pwtt, 2.0 * PWTT_CUTOFF),
            other => return Err(format!("unknown method '{other}', expected forest or pwtt")),
        };
        let map = maps
            .iter()
            .find(|m| m.period_index == period)
            .ok_or_else(|| format!("period {period} is not in 1..=12"))?;
        let mut out = Vec::with_capacity(map.values.len() * 4);
        for &v in &map.values {
            if v.is_nan() {
                out.extend_from_slice(&[0, 0, 0, 0]);
            } else {
                let [r, g, b] = ramp((v as f64 / scale).clamp(0.0, 1.0));
                out.extend_from_slice(&[r, g, b, 255]);
            }
        }
        Ok(out)
    }

    /// Building verdicts at threshold `t` as JSON, with footprint bounds in
    /// fractional pixel coordinates for drawing.
    pub fn buildings(&self, t: f64) -> String {
        self.buildings_value(t).to_string()
    }

    /// Backscatter series and per-period scores of one pixel as JSON.
    pub fn series(&self, col: usize, row: usize) -> Result<String, String> {
        self.series_value(col, row).map(|v| v.to_string())
    }
}

impl Demo {
    pub fn scene(&self) -> &Synthetic {
        &self.scene
    }

    pub fn forest_maps(&self) -> &[PeriodMap] {
        &self.forest
    }

    pub fn pwtt_maps(&self) -> &[PeriodMap] {
        &self.pwtt
    }

    pub fn buildings_value(&self, t: f64) -> Value {
        let by_id: BTreeMap<&str, &BuildingFootprint> = self.scene.footprints.iter().map(|f| (f.id.as_str(), f)).collect();
        let transform = &self.scene.stack.transform;
        let items: Vec<Value> = self
            .buildings
            .iter()
            .filter_map(|b| {
                let fp = by_id.get(b.id.as_str())?;
                let r = fp.bbox();
                let (c0, r0) = transform.crs_to_fractional(r.min_x, r.max_y);
                let (c1, r1) = transform.crs_to_fractional(r.max_x, r.min_y);
                Some(json!({
                    "id": b.id,
                    "bounds": [c0.min(c1), r0.min(r1), c0.max(c1), r0.max(r1)],
                    "damaged": b.is_damaged(t),
                    "max_post": max_over(b, 5..=12),
                    "max_pre": max_over(b, 1..=4),
                }))
            })
            .collect();
        let damaged = items.iter().filter(|v| v["damaged"] == true).count();
        json!({ "threshold": t, "n_buildings": items.len(), "n_damaged": damaged, "items": items })
    }

    pub fn series_value(&self, col: usize, row: usize) -> Result<Value, String> {
        let stack = &self.scene.stack;
        if col >= stack.width || row >= stack.height {
            return Err(format!("pixel ({col}, {row}) is outside the {}x{} scene", stack.width, stack.height));
        }
        let i = row * stack.width + col;
        let mut groups: BTreeMap<(u32, String), Vec<(String, Option<f64>)>> = BTreeMap::new();
        for layer in &stack.layers {
            let v = layer.values[i];
            groups
                .entry((layer.orbit, layer.polarization.to_string()))
                .or_default()
                .push((format_date(layer.timestamp), (!v.is_nan()).then_some(v as f64)));
        }
        let backscatter: Vec<Value> = groups
            .into_iter()
            .map(|((orbit, pol), mut pts)| {
                pts.sort_by(|a, b| a.0.cmp(&b.0));
                json!({ "orbit": orbit, "polarization": pol, "points": pts })
            })
            .collect();
        let calendar = IntervalCalendar::default();
        let periods: Vec<Value> = self
            .forest
            .iter()
            .zip(&self.pwtt)
            .map(|(f, p)| {
                let iv = calendar.interval(f.period_index as i64).expect("period in calendar");
                json!({
                    "period": f.period_index,
                    "start": format_date(iv.start),
                    "end": format_date(iv.end),
                    "forest": finite(f.values[i]),
                    "pwtt": finite(p.values[i]),
                })
            })
            .collect();
        Ok(json!({
            "col": col,
            "row": row,
            "onset": self.scene.truth.onset(col, row).map(format_date),
            "unit": "dB",
            "backscatter": backscatter,
            "periods": periods,
            "cutoff": PWTT_CUTOFF,
        }))
    }
}

fn finite(v: f32) -> Option<f64> {
    (!v.is_nan()).then_some(v as f64)
}

fn max_over(b: &BuildingDamage, range: std::ops::RangeInclusive<u8>) -> Option<f64> {
    range.filter_map(|p| b.likelihoods.get(&p).copied().flatten()).reduce(f64::max)
}

/// Dark blue through teal and yellow to red.
pub fn ramp(x: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [[24.0, 30.0, 90.0], [30.0, 150.0, 140.0], [245.0, 220.0, 60.0], [200.0, 30.0, 30.0]];
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    let pos = x * (STOPS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - k as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (STOPS[k][c] + f * (STOPS[k + 1][c] - STOPS[k][c])).round() as u8;
    }
    out
}
