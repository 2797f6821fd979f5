//! Clearance, peak picking, mean shift and site ranking.

use elevmap::landing::{
    distance_transform, detect_peaks, dt_max, mean_shift_step, select_site, DetectConfig, FeatureField, FeatureVector,
    LandingCandidate,
};
use elevmap::{Measurement, Pyramid, PyramidConfig, Raster};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Euclidean clearance in cells: distance to the nearest unsafe cell center
/// or to the nearest cell center just outside the raster.
fn euclid_oracle(safe: &Raster<bool>) -> Raster<f64> {
    let (w, h) = (safe.width as isize, safe.height as isize);
    let hazards: Vec<(isize, isize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| !safe.get(r as usize, c as usize))
        .collect();
    Raster::from_fn(safe.width, safe.height, |r, c| {
        if !safe.get(r, c) {
            return 0.0;
        }
        let (r, c) = (r as isize, c as isize);
        let edge = (r + 1).min(c + 1).min(h - r).min(w - c) as f64;
        hazards
            .iter()
            .map(|&(hr, hc)| (((hr - r).pow(2) + (hc - c).pow(2)) as f64).sqrt())
            .fold(edge, f64::min)
    })
}

fn random_mask(side: usize, density: f64, rng: &mut ChaCha8Rng) -> Raster<bool> {
    Raster::from_fn(side, side, |_, _| !rng.gen_bool(density))
}

fn assert_chamfer_close(safe: &Raster<bool>, res: f64) {
    let dt = distance_transform(safe, res);
    let oracle = euclid_oracle(safe);
    for (got, want) in dt.data.iter().zip(&oracle.data) {
        let want = want * res;
        if want == 0.0 {
            assert_eq!(*got, 0.0);
        } else {
            let err = (*got as f64 - want).abs() / want;
            assert!(err <= 0.08, "chamfer {got} vs euclidean {want}");
        }
    }
}

#[test]
fn chamfer_within_eight_percent_of_euclidean() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for density in [0.002, 0.01, 0.05, 0.2] {
        assert_chamfer_close(&random_mask(64, density, &mut rng), 0.05);
    }
}

#[test]
fn chamfer_examples() {
    let open = Raster::filled(5, 5, true);
    let dt = distance_transform(&open, 1.0);
    // Center: three cells to the outside ring.
    assert_eq!(*dt.get(2, 2), 3.0);
    assert_eq!(*dt.get(0, 0), 1.0);
    assert_eq!(*dt.get(1, 2), 2.0);
    let mut one = Raster::filled(9, 9, true);
    one.set(4, 4, false);
    let dt = distance_transform(&one, 0.1);
    assert!((*dt.get(4, 5) - 0.1).abs() < 1e-6);
    assert!((*dt.get(5, 5) - 0.4 / 3.0).abs() < 1e-6);
    assert!((*dt.get(6, 5) - 0.7 / 3.0).abs() < 1e-6);
}

fn three_regions() -> Raster<bool> {
    let mut m = Raster::filled(60, 60, false);
    for (r0, c0, n) in [(5, 5, 21), (35, 35, 15), (5, 40, 11)] {
        for r in r0..r0 + n {
            for c in c0..c0 + n {
                m.set(r, c, true);
            }
        }
    }
    m
}

#[test]
fn three_regions_give_three_ranked_peaks() {
    let dt = distance_transform(&three_regions(), 0.05);
    let peaks = detect_peaks(&dt, 0.05, &DetectConfig::default());
    let at: Vec<_> = peaks.iter().map(|p| p.peak).collect();
    assert_eq!(at, vec![(15, 15), (42, 42), (10, 45)]);
    let clear: Vec<_> = peaks.iter().map(|p| (p.clearance * 100.0).round() / 100.0).collect();
    assert_eq!(clear, vec![0.55, 0.4, 0.3]);

    let strict = DetectConfig {
        peak_factor: 0.6,
        ..DetectConfig::default()
    };
    assert_eq!(detect_peaks(&dt, 0.05, &strict).len(), 2);
    let one = DetectConfig {
        max_peaks: 1,
        ..DetectConfig::default()
    };
    assert_eq!(detect_peaks(&dt, 0.05, &one).len(), 1);
    assert_eq!(dt_max(&dt), Some((15, 15)));
}

#[test]
fn plateau_reports_first_cell() {
    // A 3x7 open strip has a flat ridge of equal clearance along its middle row.
    let mut m = Raster::filled(11, 7, false);
    for r in 2..5 {
        for c in 2..9 {
            m.set(r, c, true);
        }
    }
    let dt = distance_transform(&m, 1.0);
    let peaks = detect_peaks(&dt, 1.0, &DetectConfig::default());
    assert_eq!(peaks[0].peak, (3, 3));
    assert_eq!(dt_max(&dt), Some((3, 3)));
}

fn random_field(side: usize, rng: &mut ChaCha8Rng) -> FeatureField {
    FeatureField {
        features: Raster::from_fn(side, side, |_, _| {
            rng.gen_bool(0.9).then(|| FeatureVector {
                roughness: rng.gen_range(0.0..0.3),
                inv_distance: rng.gen_range(0.0..1.0),
                uncertainty: rng.gen_range(0.0..0.2),
            })
        }),
    }
}

/// `Σ p·exp(-xᵀΛx) / Σ exp(-xᵀΛx)` over defined cells within `radius` of `u`.
fn shift_oracle(u: (f64, f64), field: &FeatureField, radius: f64, cfg: &DetectConfig) -> Option<(f64, f64)> {
    let (mut sw, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for r in 0..field.features.height {
        for c in 0..field.features.width {
            let (py, px) = (r as f64, c as f64);
            if (py - u.0).hypot(px - u.1) > radius {
                continue;
            }
            if let Some(f) = field.features.get(r, c) {
                let q = cfg.weight_roughness * f.roughness.powi(2)
                    + cfg.weight_distance * f.inv_distance.powi(2)
                    + cfg.weight_uncertainty * f.uncertainty.powi(2);
                let k = (-q).exp();
                sw += k;
                sy += k * py;
                sx += k * px;
            }
        }
    }
    (sw > 0.0).then(|| (sy / sw, sx / sw))
}

#[test]
fn mean_shift_step_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cfg = DetectConfig::default();
    let field = random_field(40, &mut rng);
    for _ in 0..200 {
        let u = (rng.gen_range(5.0..35.0), rng.gen_range(5.0..35.0));
        let radius = rng.gen_range(1.0..10.0);
        let got = mean_shift_step(u, &field, radius, &cfg).unwrap();
        let want = shift_oracle(u, &field, radius, &cfg).unwrap();
        assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn mean_shift_moves_toward_smooth_cells() {
    let cfg = DetectConfig::default();
    // Rough on the left, smooth on the right.
    let field = FeatureField {
        features: Raster::from_fn(21, 21, |_, c| {
            Some(FeatureVector {
                roughness: if c < 10 { 0.2 } else { 0.0 },
                inv_distance: 0.5,
                uncertainty: 0.01,
            })
        }),
    };
    let next = mean_shift_step((10.0, 10.0), &field, 5.0, &cfg).unwrap();
    assert!(next.1 > 10.0);
    assert!((next.0 - 10.0).abs() < 1e-12);
}

fn mixed_map() -> Pyramid {
    let cfg = PyramidConfig {
        num_layers: 3,
        base_resolution: 0.05,
        map_size: 3.2,
        first_measurement_inflation: 25.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut map = Pyramid::new(cfg, 0.0, 0.0).unwrap();
    let (ox, oy) = map.origin_world();
    for _ in 0..4 {
        for r in 0..64 {
            for c in 0..64 {
                let noisy = c >= 32;
                let m = Measurement {
                    world_x: ox + (c as f64 + 0.5) * 0.05,
                    world_y: oy + (r as f64 + 0.5) * 0.05,
                    height: if noisy { rng.gen_range(-0.05..0.05) } else { 0.0 },
                    depth: 10.0,
                    variance: 1e-4,
                };
                map.update_at_layer(&m, 0).unwrap();
            }
        }
    }
    map.pool_pyramid().0
}

fn candidate(row: usize, col: usize, clearance: f64) -> LandingCandidate {
    LandingCandidate {
        peak: (row, col),
        shifted: (row as f64, col as f64),
        clearance,
        area_fit: None,
        degenerate: false,
    }
}

#[test]
fn select_site_prefers_low_area_variance() {
    let map = mixed_map();
    let cfg = DetectConfig::default();
    let mut cands = vec![candidate(32, 48, 1.0), candidate(32, 16, 1.0)];
    assert_eq!(select_site(&mut cands, &map, &cfg), Some(1));
    let (noisy, flat) = (cands[0].area_fit.clone().unwrap(), cands[1].area_fit.clone().unwrap());
    assert!(flat.variance < noisy.variance);
    // Disk of radius 10 cells: 317 cells, four measurements each.
    assert_eq!(flat.count, 4 * 317);

    let mut cands = vec![candidate(32, 48, 1.0), candidate(32, 16, 0.2)];
    assert_eq!(select_site(&mut cands, &map, &cfg), Some(0));
    let mut cands = vec![candidate(32, 48, 0.1), candidate(32, 16, 0.2)];
    assert_eq!(select_site(&mut cands, &map, &cfg), None);
    let mut degenerate = candidate(32, 16, 1.0);
    degenerate.degenerate = true;
    assert_eq!(select_site(&mut [degenerate], &map, &cfg), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_chamfer_bounded_by_euclidean(side in 1usize..30, density in 0.0f64..0.3, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random_mask(side, density, &mut rng);
        let dt = distance_transform(&mask, 1.0);
        let oracle = euclid_oracle(&mask);
        for (got, want) in dt.data.iter().zip(&oracle.data) {
            let got = *got as f64;
            prop_assert!(got <= want * 1.0541 + 1e-6);
            prop_assert!(got >= want * 0.9428 - 1e-6);
        }
    }

    #[test]
    fn prop_mean_shift_stays_in_window_hull(seed in 0u64..10_000, r in 1.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(24, &mut rng);
        let u = (rng.gen_range(0.0..23.0), rng.gen_range(0.0..23.0));
        if let Some(next) = mean_shift_step(u, &field, r, &DetectConfig::default()) {
            prop_assert!((next.0 - u.0).hypot(next.1 - u.1) <= r + 1e-9);
        }
    }
}
