use mfe_descent::terrain::*;
use proptest::prelude::*;

fn spec(count: usize) -> TerrainSpec {
    TerrainSpec {
        count,
        base: -800.0,
        peak_min: 1000.0,
        peak_max: 7000.0,
        spread_min: 1500.0,
        spread_max: 4000.0,
        bbox: [-10_000.0, 30_000.0, -10_000.0, 30_000.0],
        keep_low: vec![
            KeepLow { x: 0.0, y: 0.0, max_height: 4500.0 },
            KeepLow { x: 16_000.0, y: 19_000.0, max_height: -790.0 },
        ],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn heights_are_bounded_and_keep_low_points_hold(seed in 0u64..10_000, x in -2e4f64..4e4, y in -2e4f64..4e4) {
        let t = generate(&spec(12), seed).unwrap();
        let h = t.height(x, y);
        prop_assert!(h >= t.base && h <= t.max_peak() + 1e-9);
        prop_assert!(t.max_peak() == 7000.0);
        prop_assert!(t.height(0.0, 0.0) <= 4500.0);
        prop_assert!(t.height(16_000.0, 19_000.0) <= -790.0);
        prop_assert_eq!(&t, &generate(&spec(12), seed).unwrap());
    }

    #[test]
    fn gradient_matches_differences(seed in 0u64..1000, x in -5e3f64..25e3, y in -5e3f64..25e3) {
        let t = generate(&spec(6), seed).unwrap();
        let (h, g) = t.height_and_gradient(x, y);
        prop_assert_eq!(h, t.height(x, y));
        let d = 1e-3;
        let fx = (t.height(x + d, y) - t.height(x - d, y)) / (2.0 * d);
        let fy = (t.height(x, y + d) - t.height(x, y - d)) / (2.0 * d);
        // the max of bumps has kinks where two bumps tie; skip those
        prop_assume!((fx - g[0]).abs() < 1.0 && (fy - g[1]).abs() < 1.0);
        prop_assert!((fx - g[0]).abs() < 1e-5 && (fy - g[1]).abs() < 1e-5, "{fx} {fy} vs {g:?}");
    }

    #[test]
    fn clearance_margin_is_height_minus_terrain(seed in 0u64..100, x in 0f64..1e4, y in 0f64..1e4, h in 0f64..9000.0) {
        let t = generate(&spec(4), seed).unwrap();
        prop_assert!((t.clearance_margin(x, y, h, 609.6) - (h - t.height(x, y) - 609.6)).abs() < 1e-9);
    }
}

#[test]
fn json_round_trip_is_exact() {
    let t = generate(&spec(12), 1).unwrap();
    assert_eq!(TerrainModel::from_json(&t.to_json()).unwrap(), t);
}

#[test]
fn raster_spans_the_box() {
    let t = generate(&spec(12), 1).unwrap();
    let r = t.raster(41, 31);
    assert_eq!(r.len(), 41 * 31);
    assert_eq!((r[0].0, r[0].1), (-10_000.0, -10_000.0));
    assert_eq!((r[r.len() - 1].0, r[r.len() - 1].1), (30_000.0, 30_000.0));
    let max = r.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    assert!(max <= t.max_peak());
    let flat = generate(&spec(0), 1).unwrap();
    assert!(flat.raster(5, 5).iter().all(|p| p.2 == -800.0));
}
