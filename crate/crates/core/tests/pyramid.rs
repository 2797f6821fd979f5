//! Pyramid pooling against a per-cell batch oracle, direct-update write
//! counts, and shifting.

use std::collections::HashMap;

use elevmap::omg::omg_batch;
use elevmap::pyramid::{cell_pyramid_size, select_layer};
use elevmap::{CameraModel, GaussianMeasurement, Measurement, Pyramid, PyramidConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> PyramidConfig {
    PyramidConfig {
        num_layers: 3,
        base_resolution: 0.05,
        map_size: 3.2,
        first_measurement_inflation: 25.0,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// A measurement placed strictly inside finest cell `(row, col)` of a map
/// whose origin is `origin` (world meters).
fn inside(origin: (f64, f64), row: usize, col: usize, rng: &mut ChaCha8Rng) -> Measurement {
    let res = 0.05;
    Measurement {
        world_x: origin.0 + (col as f64 + rng.gen_range(0.1..0.9)) * res,
        world_y: origin.1 + (row as f64 + rng.gen_range(0.1..0.9)) * res,
        height: rng.gen_range(-1.0..1.0),
        depth: 10.0,
        variance: rng.gen_range(1e-3..1.0),
    }
}

/// Expected pooled state per `(layer, row, col)`: the batch fusion of every
/// measurement whose assigned cell is an ancestor or descendant of it, with
/// the first measurement of each assigned cell inflated.
fn pooling_oracle(
    cfg: &PyramidConfig,
    stream: &[(usize, usize, usize, Measurement)],
) -> HashMap<(usize, usize, usize), Vec<GaussianMeasurement<f64>>> {
    let mut seen = HashMap::new();
    let mut out: HashMap<_, Vec<_>> = HashMap::new();
    for (a, fr, fc, m) in stream {
        let (ra, ca) = (fr >> a, fc >> a);
        let first = seen.insert((*a, ra, ca), ()).is_none();
        let v = if first { m.variance * cfg.first_measurement_inflation } else { m.variance };
        let g = GaussianMeasurement::new(m.height, v);
        for l in 0..cfg.num_layers {
            let side = cfg.cells_per_side(l);
            for r in 0..side {
                for c in 0..side {
                    let hit = if l >= *a {
                        (ra >> (l - a), ca >> (l - a)) == (r, c)
                    } else {
                        (r >> (a - l), c >> (a - l)) == (ra, ca)
                    };
                    if hit {
                        out.entry((l, r, c)).or_default().push(g.clone());
                    }
                }
            }
        }
    }
    out
}

#[test]
fn layer_routing_examples() {
    let cam = CameraModel::default();
    let cfg = PyramidConfig::default();
    assert_eq!(select_layer(10.0, &cam, &cfg), 0);
    assert_eq!(select_layer(30.0, &cam, &cfg), 1);
    assert_eq!(select_layer(50.0, &cam, &cfg), 2);
    assert_eq!(select_layer(500.0, &cam, &cfg), 2);
}

#[test]
fn pooled_equals_oracle_per_cell() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut map = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
    let origin = map.origin_world();
    assert_eq!(origin, (-1.6, -1.6));
    // Clustered positions so cells collect several measurements.
    let stream: Vec<_> = (0..3000)
        .map(|_| {
            let (r, c) = (rng.gen_range(20..36), rng.gen_range(10..30));
            (rng.gen_range(0..3), r, c, inside(origin, r, c, &mut rng))
        })
        .collect();
    for (a, _, _, m) in &stream {
        assert!(map.update_at_layer(m, *a).unwrap());
    }
    let (pooled, _) = map.pool_pyramid();
    let oracle = pooling_oracle(&cfg, &stream);
    for l in 0..3 {
        let side = cfg.cells_per_side(l);
        for r in 0..side {
            for c in 0..side {
                let got = pooled.cell(l, r, c);
                match oracle.get(&(l, r, c)) {
                    None => assert!(got.is_empty(), "layer {l} ({r},{c}) should be empty"),
                    Some(ms) => {
                        let want = omg_batch(ms).unwrap();
                        assert_eq!(got.count, want.count);
                        assert!(rel(got.mean, want.mean) <= 1e-9, "mean at layer {l} ({r},{c})");
                        assert!(rel(got.variance, want.variance) <= 1e-9);
                        assert!(rel(got.precision_sum, want.precision_sum) <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn direct_write_counts() {
    let cfg = PyramidConfig {
        base_resolution: 0.0125,
        map_size: 3.2,
        ..PyramidConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bottom = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
    let mut top = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
    for _ in 0..500 {
        let m = Measurement {
            world_x: rng.gen_range(-1.5..1.5),
            world_y: rng.gen_range(-1.5..1.5),
            height: 0.0,
            depth: 5.0,
            variance: 0.1,
        };
        bottom.update_direct_at_layer(&m, 0).unwrap();
        top.update_direct_at_layer(&m, 2).unwrap();
    }
    assert_eq!(bottom.stats.cell_writes, 3 * 500);
    assert_eq!(top.stats.cell_writes, 21 * 500);
    assert_eq!(cell_pyramid_size(3), 21);
}

#[test]
fn full_shift_empties_and_partial_shift_keeps_state() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut map = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
    let origin = map.origin_world();
    for _ in 0..2000 {
        let (r, c) = (rng.gen_range(0..64), rng.gen_range(0..64));
        map.update_at_layer(&inside(origin, r, c, &mut rng), 0).unwrap();
    }
    let before = map.clone();
    // Three top cells right, one down: finest offsets are 12 and 4.
    map.shift_map(0.6, 0.2);
    for r in 0..64 {
        for c in 0..64 {
            let (sr, sc) = (r + 4, c + 12);
            let got = map.cell(0, r, c);
            if sr < 64 && sc < 64 {
                assert_eq!(got, before.cell(0, sr, sc));
            } else {
                assert!(got.is_empty());
            }
        }
    }
    map.shift_map(100.0, 0.0);
    assert_eq!(map.filled_cells(), 0);
}

fn stream_strategy() -> impl Strategy<Value = Vec<(u8, u8, u8, i8, i8)>> {
    prop::collection::vec((0u8..3, 0u8..64, 0u8..64, -2i8..=2, -2i8..=2), 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Pooling after interleaved shifts equals direct all-layer updates under
    /// the same shifts.
    #[test]
    fn prop_pooled_equals_direct_with_shifts(ops in stream_strategy(), seed in 0u64..1000) {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut single = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
        let mut direct = Pyramid::new(cfg.clone(), 0.0, 0.0).unwrap();
        for (i, (layer, r, c, dx, dy)) in ops.into_iter().enumerate() {
            if i % 17 == 16 {
                single.shift_by(dx as i64, dy as i64);
                direct.shift_by(dx as i64, dy as i64);
            }
            let m = inside(single.origin_world(), r as usize, c as usize, &mut rng);
            single.update_at_layer(&m, layer as usize).unwrap();
            direct.update_direct_at_layer(&m, layer as usize).unwrap();
        }
        let (pooled, _) = single.pool_pyramid();
        for l in 0..3 {
            let side = cfg.cells_per_side(l);
            for r in 0..side {
                for c in 0..side {
                    let (a, b) = (pooled.cell(l, r, c), direct.cell(l, r, c));
                    prop_assert_eq!(a.count, b.count);
                    if !a.is_empty() {
                        prop_assert!(rel(a.mean, b.mean) <= 1e-6);
                        prop_assert!(rel(a.variance, b.variance) <= 1e-6);
                        prop_assert!(rel(a.precision_sum, b.precision_sum) <= 1e-6);
                    }
                }
            }
        }
    }
}
