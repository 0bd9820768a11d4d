use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sar_damage::forest::{ForestConfig, ForestModel};
use sar_damage::geodata::{PeriodMap, RasterStack};
use sar_damage::inference::{infer_map, infer_map_masked, infer_pixel, pwtt_maps, pwtt_maps_masked, InferenceJob};
use sar_damage::pipeline::{train_forest, TrainingOptions};
use sar_damage::synthgen::{generate, Scenario, Synthetic};
use sar_damage::temporal::interval;
use sar_damage::Window;

fn small(preset: &str, w: usize, h: usize) -> Synthetic {
    generate(&Scenario { width: w, height: h, ..Scenario::preset(preset).unwrap() }).unwrap()
}

fn model(g: &Synthetic) -> ForestModel {
    train_forest(&g.stack, &g.labels, &TrainingOptions::default(), &ForestConfig { seed: 9, n_trees: 12, ..Default::default() }).unwrap()
}

fn job(periods: &[u8], tile: usize, threads: usize) -> InferenceJob {
    InferenceJob { periods: periods.to_vec(), tile_size: tile, threads, ..Default::default() }
}

fn same(a: &[PeriodMap], b: &[PeriodMap]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.period_index == y.period_index && x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[test]
fn tiling_and_workers_do_not_change_maps() {
    let g = small("seasonal-confounder", 24, 24);
    let m = model(&g);
    let base = infer_map(&g.stack, &m, &job(&[5, 9], 256, 1)).unwrap();
    for (tile, threads) in [(1, 2), (3, 1), (7, 3), (24, 2)] {
        assert!(same(&base, &infer_map(&g.stack, &m, &job(&[5, 9], tile, threads)).unwrap()), "tile {tile} threads {threads}");
    }
    let win = InferenceJob { window: Window::Mean3x3, ..job(&[6], 256, 1) };
    let a = infer_map(&g.stack, &m, &win).unwrap();
    let b = infer_map(&g.stack, &m, &InferenceJob { tile_size: 6, threads: 3, ..win.clone() }).unwrap();
    assert!(same(&a, &b));
    let p = pwtt_maps(&g.stack, &job(&[5, 9], 256, 1)).unwrap();
    assert!(same(&p, &pwtt_maps(&g.stack, &job(&[5, 9], 4, 3)).unwrap()));
}

#[test]
fn layer_order_is_irrelevant() {
    let g = small("seasonal-confounder", 22, 22);
    let m = model(&g);
    let mut shuffled: RasterStack = g.stack.clone();
    shuffled.layers.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let j = job(&[3, 8], 256, 1);
    assert!(same(&infer_map(&g.stack, &m, &j).unwrap(), &infer_map(&shuffled, &m, &j).unwrap()));
    assert!(same(&pwtt_maps(&g.stack, &j).unwrap(), &pwtt_maps(&shuffled, &j).unwrap()));
}

#[test]
fn nodata_only_where_no_orbit_is_complete() {
    let g = small("noise-free", 24, 24);
    let m = model(&g);
    let mut stack = g.stack.clone();
    let orbits = stack.orbits();
    for l in stack.layers.iter_mut() {
        // pixel 0: every orbit loses its reference VV; pixel 1: only the first orbit does
        if l.timestamp <= interval(0).unwrap().end && l.polarization == sar_damage::geodata::Polarization::VV {
            l.values[0] = f32::NAN;
            if l.orbit == orbits[0] {
                l.values[1] = f32::NAN;
            }
        }
    }
    let maps = infer_map(&stack, &m, &job(&[6], 256, 1)).unwrap();
    let v = &maps[0].values;
    assert!(v[0].is_nan());
    assert!(!v[1].is_nan());
    assert_eq!(v.iter().filter(|x| x.is_nan()).count(), 1);
    // the surviving orbit alone decides pixel 1
    let only: RasterStack = RasterStack { layers: stack.layers.iter().filter(|l| l.orbit != orbits[0]).cloned().collect(), ..stack.clone() };
    let p = infer_pixel(&only, &m, (1, 0), &interval(0).unwrap(), &interval(6).unwrap(), Window::Pixel).unwrap();
    assert_eq!(v[1], p as f32);
}

#[test]
fn constant_stack_gives_constant_map() {
    let g = small("noise-free", 22, 22);
    let m = model(&g);
    let mut stack = g.stack.clone();
    for l in stack.layers.iter_mut() {
        l.values.iter_mut().for_each(|v| *v = -12.5);
    }
    for map in infer_map(&stack, &m, &job(&[2, 7, 12], 3, 2)).unwrap() {
        assert!(map.values.iter().all(|v| v.to_bits() == map.values[0].to_bits()));
    }
    for map in pwtt_maps(&stack, &job(&[7], 256, 1)).unwrap() {
        assert!(map.values.iter().all(|v| *v == 0.0));
    }
}

fn median(mut v: Vec<f32>) -> f32 {
    v.retain(|x| !x.is_nan());
    v.sort_by(f32::total_cmp);
    v[v.len() / 2]
}

#[test]
fn planted_steps_stand_out() {
    let g = generate(&Scenario::preset("noise-free").unwrap()).unwrap();
    let m = model(&g);
    let forest = infer_map(&g.stack, &m, &job(&[10], 256, 2)).unwrap().remove(0);
    let pwtt = pwtt_maps(&g.stack, &job(&[10], 256, 2)).unwrap().remove(0);
    let (fm, pm) = (median(forest.values.clone()), median(pwtt.values.clone()));
    let mut checked = 0;
    for e in &g.truth.events {
        if e.orbit_deltas.is_empty() || e.date > interval(9).unwrap().end {
            continue;
        }
        let ([c, r], _) = e.pixels.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!(forest.get(c, r) > fm, "{} forest {} <= {fm}", e.label_id, forest.get(c, r));
        assert!(pwtt.get(c, r) > pm, "{} pwtt {} <= {pm}", e.label_id, pwtt.get(c, r));
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn masked_maps_match_dense_maps_on_the_mask() {
    let g = small("seasonal-confounder", 24, 21);
    let m = model(&g);
    let mask: Vec<bool> = (0..24 * 21).map(|i| i % 5 == 0 || i % 7 == 3).collect();
    let j = job(&[4, 11], 5, 2);
    let dense = infer_map(&g.stack, &m, &j).unwrap();
    let masked = infer_map_masked(&g.stack, &m, &j, &mask).unwrap();
    let pd = pwtt_maps(&g.stack, &j).unwrap();
    let pm = pwtt_maps_masked(&g.stack, &j, &mask).unwrap();
    for (d, s) in dense.iter().zip(&masked).chain(pd.iter().zip(&pm)) {
        for (i, keep) in mask.iter().enumerate() {
            if *keep {
                assert_eq!(d.values[i].to_bits(), s.values[i].to_bits());
            } else {
                assert!(s.values[i].is_nan());
            }
        }
    }
    assert!(infer_map_masked(&g.stack, &m, &j, &mask[1..]).is_err());
}

#[test]
fn jobs_are_validated() {
    let g = small("noise-free", 21, 21);
    let m = model(&g);
    assert!(infer_map(&g.stack, &m, &job(&[], 4, 1)).is_err());
    assert!(infer_map(&g.stack, &m, &job(&[13], 4, 1)).is_err());
    assert!(infer_map(&g.stack, &m, &job(&[3], 0, 1)).is_err());
    let mut bad = m.clone();
    bad.feature_order_tag = "something else".into();
    assert!(infer_map(&g.stack, &bad, &job(&[3], 4, 1)).unwrap_err().to_string().contains("incompatible"));
}
