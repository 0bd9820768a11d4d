use chrono::NaiveDate;
use proptest::prelude::*;

use sar_damage::features::{build_feature_vector, extract_segments, summarize, Slot, Statistic, Window, FEATURE_LEN};
use sar_damage::geodata::{GeoTransform, Layer, OrbitDirection, Polarization, RasterStack};
use sar_damage::temporal::interval;
use sar_damage::SeriesSegment;

fn segment() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..=5.0, 1..64)
}

proptest! {
    #[test]
    fn order_statistics_bracket(x in segment()) {
        let s = summarize(&x).unwrap();
        let (min, max, mean, median) = (s[0], s[1], s[2], s[3]);
        prop_assert!(min <= median && median <= max);
        prop_assert!(min <= mean && mean <= max);
        prop_assert!(s[4] >= 0.0);
    }

    #[test]
    fn permutation_is_bitwise_invariant(x in segment(), seed in any::<u64>()) {
        let mut y = x.clone();
        let mut state = seed;
        for i in (1..y.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            y.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (a, b) = (summarize(&x).unwrap(), summarize(&y).unwrap());
        prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn shift_moves_location_only(x in segment(), c in -10.0f64..10.0) {
        let a = summarize(&x).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = summarize(&shifted).unwrap();
        for i in 0..4 {
            prop_assert!((b[i] - a[i] - c).abs() < 1e-9);
        }
        prop_assert!((b[4] - a[4]).abs() < 1e-9);
    }

    #[test]
    fn nan_samples_are_ignored(x in segment(), holes in prop::collection::vec(any::<bool>(), 64)) {
        let mut with_nan = Vec::new();
        for (i, v) in x.iter().enumerate() {
            if holes[i] {
                with_nan.push(f64::NAN);
            }
            with_nan.push(*v);
        }
        prop_assert_eq!(summarize(&with_nan).unwrap(), summarize(&x).unwrap());
        prop_assert_eq!(SeriesSegment::new(with_nan).len(), x.len());
    }
}

#[test]
fn vector_layout_follows_slots_then_statistics() {
    let seg = |v: f64| SeriesSegment::new([v, v + 1.0, v + 3.0]);
    let fv = build_feature_vector(&seg(0.0), &seg(10.0), &seg(20.0), &seg(30.0)).unwrap();
    assert_eq!(fv.0.len(), FEATURE_LEN);
    assert_eq!(fv.get(Slot::RefVV, Statistic::Min), 0.0);
    assert_eq!(fv.get(Slot::RefVH, Statistic::Max), 13.0);
    assert_eq!(fv.0[2 * 7], 20.0);
    assert_eq!(fv.get(Slot::NewVH, Statistic::Median), 31.0);
    assert!(build_feature_vector(&seg(0.0), &SeriesSegment::new([]), &seg(0.0), &seg(0.0)).is_err());
}

fn constant_stack(value: f32) -> RasterStack {
    let mut layers = Vec::new();
    for (i, day) in [(0, "2020-06-01"), (1, "2020-09-01"), (2, "2021-03-10"), (3, "2021-04-10")] {
        let _ = i;
        for pol in [Polarization::VV, Polarization::VH] {
            layers.push(Layer {
                values: vec![value; 25],
                timestamp: NaiveDate::parse_from_str(day, "%Y-%m-%d").unwrap(),
                orbit: 14,
                direction: OrbitDirection::Ascending,
                polarization: pol,
            });
        }
    }
    RasterStack {
        width: 5,
        height: 5,
        transform: GeoTransform { origin_x: 0.0, origin_y: 50.0, pixel_w: 10.0, pixel_h: -10.0, crs: "EPSG:32636".into() },
        layers,
    }
}

#[test]
fn mean_window_of_constant_stack_equals_pixel() {
    let stack = constant_stack(-11.25);
    let (r, n) = (interval(0).unwrap(), interval(1).unwrap());
    for (c, row) in [(0, 0), (2, 2), (4, 3)] {
        let a = extract_segments(&stack, (c, row), 14, &r, &n, Window::Pixel).feature_vector().unwrap();
        let b = extract_segments(&stack, (c, row), 14, &r, &n, Window::Mean3x3).feature_vector().unwrap();
        assert_eq!(a, b);
    }
}
