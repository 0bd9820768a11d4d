use proptest::prelude::*;

use sar_damage::pwtt::{fuse_orbits, is_damaged, orbit_score, pwtt_statistic, DEFAULT_CUTOFF};
use sar_damage::SeriesSegment;

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-25.0f64..0.0, 2..40)
}

fn welch(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let ((m1, v1, n1), (m2, v2, n2)) = (stats(a), stats(b));
    (m1 - m2).abs() / (v1 / n1 + v2 / n2).sqrt()
}

fn seg(v: &[f64]) -> SeriesSegment {
    SeriesSegment::new(v.iter().copied())
}

proptest! {
    #[test]
    fn statistic_is_symmetric(a in sample(), b in sample()) {
        let (x, y) = (pwtt_statistic(&seg(&a), &seg(&b)).unwrap(), pwtt_statistic(&seg(&b), &seg(&a)).unwrap());
        prop_assert!((x.t_abs - y.t_abs).abs() <= 1e-9 * (1.0 + x.t_abs));
        prop_assert!(x.t_abs >= 0.0);
    }

    #[test]
    fn shift_and_scale_invariant(a in sample(), b in sample(), c in -20.0f64..20.0, k in 0.1f64..10.0) {
        let t = pwtt_statistic(&seg(&a), &seg(&b)).unwrap().t_abs;
        prop_assume!(t.is_finite());
        let f = |v: &Vec<f64>| v.iter().map(|x| k * x + c).collect::<Vec<_>>();
        let u = pwtt_statistic(&seg(&f(&a)), &seg(&f(&b))).unwrap().t_abs;
        prop_assert!((t - u).abs() <= 1e-6 * (1.0 + t), "{} vs {}", t, u);
    }

    #[test]
    fn matches_textbook_welch(a in sample(), b in sample()) {
        let t = pwtt_statistic(&seg(&a), &seg(&b)).unwrap().t_abs;
        let want = welch(&a, &b);
        prop_assume!(want.is_finite());
        prop_assert!((t - want).abs() <= 1e-8 * (1.0 + want));
    }

    #[test]
    fn orbit_max_and_band_mean(t in prop::collection::vec(prop::option::of(0.0f64..10.0), 0..5)) {
        let fused = fuse_orbits(t.clone());
        let want = t.iter().flatten().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        prop_assert_eq!(fused, want);
    }
}

#[test]
fn band_mean_uses_available_bands() {
    let (a, b) = (seg(&[1.0, 2.0, 3.0]), seg(&[4.0, 5.0, 6.0]));
    let single = seg(&[1.0]);
    let t = pwtt_statistic(&a, &b).unwrap().t_abs;
    assert_eq!(orbit_score(&[(&a, &b), (&single, &b)]), Some(t));
    assert_eq!(orbit_score(&[(&a, &b), (&a, &a)]), Some(t / 2.0));
    assert_eq!(orbit_score(&[(&single, &b)]), None);
}

#[test]
fn cutoff_is_inclusive() {
    assert!(is_damaged(DEFAULT_CUTOFF, DEFAULT_CUTOFF));
    assert!(!is_damaged(f64::from_bits(DEFAULT_CUTOFF.to_bits() - 1), DEFAULT_CUTOFF));
    assert!(is_damaged(f64::INFINITY, DEFAULT_CUTOFF));
}
