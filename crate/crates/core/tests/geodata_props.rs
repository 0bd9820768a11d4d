use std::fs;
use std::path::Path;

use proptest::prelude::*;

use sar_damage::geodata::{
    decode_u8, encode_probability, export_uint8, parse_footprints, parse_labels, parse_regions, quantization_error, read_map, read_stack,
    write_map, write_map_u8, write_stack, GeoTransform, GridSpec, PeriodMap,
};
use sar_damage::synthgen::{generate, Scenario};

fn grid(w: usize, h: usize, px: f64) -> GridSpec {
    GridSpec {
        width: w,
        height: h,
        transform: GeoTransform { origin_x: 312_000.0, origin_y: 5_540_000.0, pixel_w: px, pixel_h: -px, crs: "EPSG:32636".into() },
    }
}

proptest! {
    #[test]
    fn pixel_centres_map_back(w in 1usize..300, h in 1usize..300, px in 0.5f64..60.0, fc in 0.0f64..1.0, fr in 0.0f64..1.0) {
        let g = grid(w, h, px);
        let (col, row) = (((w as f64) * fc) as usize % w, ((h as f64) * fr) as usize % h);
        let [x, y] = g.transform.pixel_center(col, row);
        prop_assert_eq!(g.crs_to_pixel(x, y), Some((col, row)));
        prop_assert!(g.transform.cell_rect(col, row).contains([x, y]));
    }

    #[test]
    fn points_land_in_the_cell_that_contains_them(w in 1usize..200, h in 1usize..200, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let g = grid(w, h, 10.0);
        let e = g.extent();
        let (x, y) = (e.min_x + fx * (e.max_x - e.min_x), e.min_y + fy * (e.max_y - e.min_y));
        if let Some((c, r)) = g.crs_to_pixel(x, y) {
            prop_assert!(g.transform.cell_rect(c, r).contains([x, y]));
        }
        prop_assert_eq!(g.crs_to_pixel(e.min_x - 1.0, y), None);
        prop_assert_eq!(g.crs_to_pixel(x, e.max_y + 1.0), None);
    }

    #[test]
    fn byte_encoding_is_monotone(p in 0.0f32..=1.0, q in 0.0f32..=1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(encode_probability(lo) <= encode_probability(hi));
        prop_assert!(quantization_error(p) <= 0.5 / 255.0 + 1e-12);
        prop_assert!((decode_u8(encode_probability(p)) - p).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn byte_export_marks_nodata() {
    let map = PeriodMap { width: 3, height: 3, transform: grid(3, 3, 10.0).transform, period_index: 5, values: vec![0.0, 1.0, f32::NAN, 0.5, 0.2, 0.75, f32::NAN, 0.001, 0.999] };
    let b = export_uint8(&map);
    assert_eq!(b.values, vec![0, 255, 0, 128, 51, 191, 0, 0, 255]);
    let nodata: Vec<usize> = (0..9).filter(|&i| b.is_nodata(i)).collect();
    assert_eq!(nodata, vec![2, 6]);
    let dir = tempfile::tempdir().unwrap();
    write_map_u8(&map, dir.path()).unwrap();
    let back = read_map(dir.path()).unwrap();
    assert_eq!(back.period_index, 5);
    for (a, b) in map.values.iter().zip(&back.values) {
        assert_eq!(a.is_nan(), b.is_nan());
        if !a.is_nan() {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect();
    out.sort();
    out
}

#[test]
fn stack_round_trip_is_byte_identical() {
    let s = Scenario { width: 24, height: 22, ..Scenario::preset("seasonal-confounder").unwrap() };
    let mut stack = generate(&s).unwrap().stack;
    stack.layers[3].values[7] = f32::NAN;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_stack(&stack, a.path()).unwrap();
    let back = read_stack(a.path()).unwrap();
    write_stack(&back, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(back.layers.len(), stack.layers.len());
    for (x, y) in stack.layers.iter().zip(&back.layers) {
        assert_eq!((x.timestamp, x.orbit, x.polarization, x.direction), (y.timestamp, y.orbit, y.polarization, y.direction));
        assert!(x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn float_map_round_trip() {
    let map = PeriodMap { width: 2, height: 2, transform: grid(2, 2, 10.0).transform, period_index: 7, values: vec![0.125, f32::NAN, 3.5, 0.0] };
    let dir = tempfile::tempdir().unwrap();
    write_map(&map, dir.path()).unwrap();
    let back = read_map(dir.path()).unwrap();
    assert!(map.values.iter().zip(&back.values).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(back.transform, map.transform);
}

#[test]
fn truncated_payload_is_reported() {
    let s = Scenario { width: 21, height: 21, ..Scenario::preset("noise-free").unwrap() };
    let stack = generate(&s).unwrap().stack;
    let dir = tempfile::tempdir().unwrap();
    write_stack(&stack, dir.path()).unwrap();
    let victim = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "f32")).unwrap();
    fs::write(&victim, [0u8; 10]).unwrap();
    let msg = read_stack(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("payload has 10 bytes"), "{msg}");
}

#[test]
fn vector_inputs_report_bad_features() {
    assert!(parse_labels("{\"type\":\"Feature\"}").unwrap_err().to_string().contains("FeatureCollection"));
    let labels = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"id":"a","damage_class":"Destroyed","unosat_date":"2022-05-01"},"geometry":{"type":"Point","coordinates":[1,2]}},
        {"type":"Feature","properties":{"id":"b","damage_class":"Destroyed"},"geometry":{"type":"Point","coordinates":[1,2]}},
        {"type":"Feature","properties":{"id":"c","damage_class":"Destroyed","unosat_date":"2022-05-01"},"geometry":{"type":"LineString","coordinates":[[1,2],[3,4]]}}
    ]}"#;
    let r = parse_labels(labels).unwrap();
    assert_eq!(r.items.len(), 1);
    assert!(r.items[0].is_positive());
    assert_eq!(r.dropped, 2);
    assert!(r.warnings[0].message.contains("unosat_date"));
    assert!(r.warnings[1].message.contains("Point"));

    let fp = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"id":"ok"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]]]}},
        {"type":"Feature","properties":{"id":"tiny"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[5,0],[5,5],[0,5],[0,0]]]}},
        {"type":"Feature","properties":{"id":"open"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10]]]}},
        {"type":"Feature","properties":{"id":"bow"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[10,10],[10,0],[0,10],[0,0]]]}}
    ]}"#;
    let r = parse_footprints(fp, 50.0, "EPSG:32636").unwrap();
    assert_eq!(r.items.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(), ["ok"]);
    assert_eq!(r.items[0].area_m2, 100.0);
    assert_eq!(r.dropped, 3);
    let msgs: Vec<&str> = r.warnings.iter().map(|w| w.message.as_str()).collect();
    assert!(msgs.iter().any(|m| m.contains("not closed")), "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("self-intersects")), "{msgs:?}");

    let regions = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"id":7,"name":"North"},"geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,0]]]]}}
    ]}"#;
    let r = parse_regions(regions).unwrap();
    assert_eq!((r.items[0].id.as_str(), r.items[0].name.as_str()), ("7", "North"));
}
