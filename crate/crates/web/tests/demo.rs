use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde_json::Value;

use sar_damage_web::{ramp, Demo, PWTT_CUTOFF};

fn demo() -> &'static Demo {
    static D: OnceLock<Demo> = OnceLock::new();
    D.get_or_init(|| Demo::new("clean-steps", 4, 48, 8).unwrap())
}

#[test]
fn heatmap_pixels_follow_the_maps() {
    let d = demo();
    let n = d.width() * d.height();
    for period in [1u8, 6, 12] {
        let rgba = d.heatmap(period, "forest").unwrap();
        assert_eq!(rgba.len(), n * 4);
        let map = d.forest_maps().iter().find(|m| m.period_index == period).unwrap();
        for (i, &v) in map.values.iter().enumerate() {
            let px = &rgba[i * 4..i * 4 + 4];
            if v.is_nan() {
                assert_eq!(px, [0, 0, 0, 0]);
            } else {
                assert_eq!(&px[..3], ramp(v as f64));
                assert_eq!(px[3], 255);
            }
        }
        let pw = d.heatmap(period, "pwtt").unwrap();
        let tmap = d.pwtt_maps().iter().find(|m| m.period_index == period).unwrap();
        let i = tmap.values.iter().position(|v| !v.is_nan()).unwrap();
        assert_eq!(&pw[i * 4..i * 4 + 3], ramp((tmap.values[i] as f64 / (2.0 * PWTT_CUTOFF)).min(1.0)));
    }
    assert!(d.heatmap(0, "forest").is_err());
    assert!(d.heatmap(13, "forest").is_err());
    assert!(d.heatmap(5, "optical").is_err());
}

#[test]
fn ramp_endpoints() {
    assert_eq!(ramp(0.0), [24, 30, 90]);
    assert_eq!(ramp(1.0), [200, 30, 30]);
    assert_eq!(ramp(-3.0), ramp(0.0));
    assert_eq!(ramp(f64::NAN), ramp(0.0));
}

fn damaged_by_rule(b: &Value, t: f64) -> bool {
    let post = b["max_post"].as_f64();
    let pre = b["max_pre"].as_f64();
    match (post, pre) {
        (None, _) => false,
        (Some(p), None) => p >= t,
        (Some(p), Some(q)) => p >= t && q < t,
    }
}

#[test]
fn threshold_changes_only_verdicts() {
    let d = demo();
    let ids = |v: &Value| v["items"].as_array().unwrap().iter().map(|b| b["id"].as_str().unwrap().to_string()).collect::<Vec<_>>();
    let base: Value = serde_json::from_str(&d.buildings(Demo::default_threshold())).unwrap();
    assert!(base["n_buildings"].as_u64().unwrap() > 10);
    for t in [0.0, 0.3, 0.5, 0.655, 0.8, 0.95, 1.01] {
        let v: Value = serde_json::from_str(&d.buildings(t)).unwrap();
        assert_eq!(ids(&v), ids(&base));
        let items = v["items"].as_array().unwrap();
        let recount = items.iter().filter(|b| damaged_by_rule(b, t)).count();
        assert_eq!(v["n_damaged"].as_u64().unwrap() as usize, recount, "t = {t}");
        for b in items {
            assert_eq!(b["damaged"].as_bool().unwrap(), damaged_by_rule(b, t));
            let r = b["bounds"].as_array().unwrap();
            assert!(r[0].as_f64() <= r[2].as_f64() && r[1].as_f64() <= r[3].as_f64());
        }
    }
    let none: Value = serde_json::from_str(&d.buildings(1.01)).unwrap();
    assert_eq!(none["n_damaged"], 0);
}

#[test]
fn verdicts_agree_with_the_scene_truth() {
    let d = demo();
    let v = d.buildings_value(Demo::default_threshold());
    let flagged: BTreeSet<&str> = v["items"].as_array().unwrap().iter().filter(|b| b["damaged"] == true).map(|b| b["id"].as_str().unwrap()).collect();
    let truth: BTreeSet<&str> = d.scene().truth.damaged_buildings.iter().map(String::as_str).collect();
    assert!(!flagged.is_empty() && !truth.is_empty());
    let hits = flagged.intersection(&truth).count() as f64;
    assert!(hits / flagged.len() as f64 >= 0.6, "precision {hits}/{}", flagged.len());
    assert!(hits / truth.len() as f64 >= 0.5, "recall {hits}/{}", truth.len());
}

#[test]
fn pixel_series() {
    let d = demo();
    let (col, row) = (7, 9);
    let v = d.series_value(col, row).unwrap();
    let periods = v["periods"].as_array().unwrap();
    assert_eq!(periods.len(), 12);
    for (k, p) in periods.iter().enumerate() {
        assert_eq!(p["period"], k + 1);
        let f = d.forest_maps()[k].values[row * d.width() + col];
        assert_eq!(p["forest"].as_f64(), (!f.is_nan()).then_some(f as f64));
    }
    let series = v["backscatter"].as_array().unwrap();
    let expected: BTreeSet<(u32, String)> = d.scene().stack.layers.iter().map(|l| (l.orbit, l.polarization.to_string())).collect();
    assert_eq!(series.len(), expected.len());
    let total: usize = series.iter().map(|s| s["points"].as_array().unwrap().len()).sum();
    assert_eq!(total, d.scene().stack.layers.len());
    for s in series {
        let dates: Vec<&str> = s["points"].as_array().unwrap().iter().map(|p| p[0].as_str().unwrap()).collect();
        assert!(dates.windows(2).all(|w| w[0] <= w[1]));
    }
    assert_eq!(v["onset"].is_string(), d.scene().truth.onset(col, row).is_some());
    assert!(d.series(d.width(), 0).is_err());
    assert_eq!(serde_json::from_str::<Value>(&d.series(col, row).unwrap()).unwrap(), v);
}

#[test]
fn construction_is_deterministic_and_validated() {
    let a = Demo::new("noise-free", 2, 32, 4).unwrap();
    let b = Demo::new("noise-free", 2, 32, 4).unwrap();
    assert_eq!(a.buildings(0.5), b.buildings(0.5));
    assert_eq!(a.heatmap(8, "forest").unwrap(), b.heatmap(8, "forest").unwrap());
    assert!(Demo::new("no-such-preset", 0, 32, 4).is_err());
    assert!(Demo::new("clean-steps", 0, 0, 4).is_err());
}
