use super::topology::component_count;
use super::*;
use crate::seeds::rng_from;
use proptest::prelude::*;
use rand::Rng;

// -------------------------------------------------------------------------
// Rasterization against a brute-force disc oracle
// -------------------------------------------------------------------------

#[test]
fn circle_raster_matches_brute_force() {
    let params = ShapeParams::ellipse(1.0, 0.0).unwrap();
    let center = (32.0, 32.0);
    let radius = 10.0;
    let mask = raster_shape(&params, center, radius, 64, 64).unwrap();

    let mut oracle = 0usize;
    for r in 0..64 {
        for c in 0..64 {
            let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
            let inside = d2 <= radius * radius;
            assert_eq!(mask.get(r, c), inside, "pixel ({r},{c})");
            oracle += usize::from(inside);
        }
    }
    assert_eq!(mask.foreground_count(), oracle);
    // Area of a radius-10 disc, allowing for discretization.
    let expected = std::f64::consts::PI * radius * radius;
    assert!((oracle as f64 - expected).abs() < 0.05 * expected);
}

#[test]
fn off_center_shapes_clip_at_the_frame() {
    let params = ShapeParams::ellipse(1.0, 0.0).unwrap();
    // A disc reaching past the right edge simply loses the clipped pixels.
    let mask = raster_shape(&params, (8.0, 14.0), 6.0, 16, 16).unwrap();
    for r in 0..16 {
        for c in 0..16 {
            let d2 = (r as f64 - 8.0).powi(2) + (c as f64 - 14.0).powi(2);
            assert_eq!(mask.get(r, c), d2 <= 36.0);
        }
    }
}

#[test]
fn zero_scale_keeps_at_most_the_center_pixel() {
    let params = ShapeParams::ellipse(1.0, 0.0).unwrap();
    // Center between lattice points: empty.
    let m = raster_shape(&params, (7.5, 7.5), 0.0, 16, 16).unwrap();
    assert_eq!(m.foreground_count(), 0);
    // Center exactly on a pixel: that one pixel.
    let m = raster_shape(&params, (7.0, 7.0), 0.0, 16, 16).unwrap();
    assert_eq!(m.foreground_count(), 1);
    assert!(m.get(7, 7));
}

// -------------------------------------------------------------------------
// Bisection
// -------------------------------------------------------------------------

/// Oracle: the set of areas reachable by any scale is exactly the set of
/// prefix counts of the sorted per-pixel entry scales.
fn achievable_best_gap(
    params: &ShapeParams,
    center: (f64, f64),
    target: usize,
    h: usize,
    w: usize,
) -> u64 {
    let mut entry: Vec<f64> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let dr = r as f64 - center.0;
            let dc = c as f64 - center.1;
            let d = dr.hypot(dc);
            entry.push(if d == 0.0 {
                0.0
            } else {
                d / params.radius_at(dr.atan2(dc))
            });
        }
    }
    entry.sort_by(f64::total_cmp);
    let mut counts = vec![0usize];
    let mut i = 0;
    while i < entry.len() {
        let mut j = i;
        while j < entry.len() && entry[j] == entry[i] {
            j += 1;
        }
        counts.push(j);
        i = j;
    }
    counts
        .into_iter()
        .filter(|&n| !(n == 0 && target > 0))
        .map(|n| (n as i64 - target as i64).unsigned_abs())
        .min()
        .unwrap()
}

#[test]
fn bisection_reaches_the_closest_achievable_area() {
    let mut rng = rng_from(4242);
    for trial in 0..40 {
        let kind = ShapeKind::ALL[trial % 4];
        let params = ShapeParams::sample(kind, &mut rng);
        let center = (
            rng.random_range(8.0..24.0f64),
            rng.random_range(8.0..24.0f64),
        );
        let target = rng.random_range(1..=900usize);
        let outcome = bisect_scale(&params, center, target, 32, 32).unwrap();
        let got_gap =
            (outcome.mask.foreground_count() as i64 - target as i64).unsigned_abs();
        let best = achievable_best_gap(&params, center, target, 32, 32);
        assert_eq!(
            got_gap, best,
            "{kind} target {target}: got count {} (gap {got_gap}), best gap {best}",
            outcome.mask.foreground_count()
        );
    }
}

#[test]
fn bisection_hits_exact_targets_head_on() {
    // A circle around a center whose fractional row/col offsets share no
    // common values has all-distinct entry scales (offsets like .7/.3 would
    // tie |dr| against |dc|), so every target is exactly achievable.
    let params = ShapeParams::ellipse(1.0, 0.3).unwrap();
    let center = (15.73, 16.31);
    for target in [1usize, 5, 50, 200, 700, 1024] {
        let outcome = bisect_scale(&params, center, target, 32, 32).unwrap();
        assert_eq!(outcome.mask.foreground_count(), target, "target {target}");
    }
}

#[test]
fn bisection_handles_the_full_frame() {
    let params = ShapeParams::ellipse(1.0, 0.0).unwrap();
    let outcome = bisect_scale(&params, (8.0, 8.0), 256, 16, 16).unwrap();
    assert_eq!(outcome.mask.foreground_count(), 256);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Area is non-decreasing in scale for every shape family.
    #[test]
    fn area_is_monotone_in_scale(seed in any::<u64>(), kind_idx in 0usize..4) {
        let mut rng = rng_from(seed);
        let params = ShapeParams::sample(ShapeKind::ALL[kind_idx], &mut rng);
        let center = (
            rng.random_range(4.0..20.0f64),
            rng.random_range(4.0..20.0f64),
        );
        let mut prev = 0usize;
        for i in 0..30 {
            let scale = i as f64 * 0.7;
            let m = raster_shape(&params, center, scale, 24, 24).unwrap();
            prop_assert!(m.foreground_count() >= prev);
            prev = m.foreground_count();
        }
    }

    /// Mixture samples always land inside one of the configured buckets.
    #[test]
    fn mixture_samples_stay_in_range(seed in any::<u64>()) {
        let mixture = RatioMixture::training_default();
        let mut rng = rng_from(seed);
        for _ in 0..32 {
            let r = mixture.sample(&mut rng);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(mixture.bucket_of(r).is_some());
        }
    }
}

// -------------------------------------------------------------------------
// Area adjustment
// -------------------------------------------------------------------------

fn mask_from(rows: &[&str]) -> BinaryMask {
    let h = rows.len();
    let w = rows[0].len();
    let mut m = BinaryMask::new_empty(h, w);
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            if ch == '#' {
                m.set(r, c, true);
            }
        }
    }
    m
}

#[test]
fn adjustment_grows_to_the_exact_target() {
    let m = mask_from(&["........", "...##...", "...##...", "........"]);
    let mut rng = rng_from(1);
    let adjusted = adjust_area(&m, 5, &mut rng).unwrap();
    assert_eq!(adjusted.foreground_count(), 5);
    assert_eq!(component_count(&adjusted), 1);
}

#[test]
fn adjustment_shrinks_to_the_exact_target() {
    // The frame must be large enough that the gap stays within the 5%
    // adjustment contract.
    let m = mask_from(&[
        "................",
        "......####......",
        "......####......",
        "................",
    ]);
    let mut rng = rng_from(2);
    let adjusted = adjust_area(&m, 6, &mut rng).unwrap();
    assert_eq!(adjusted.foreground_count(), 6);
    assert_eq!(component_count(&adjusted), 1);
}

#[test]
fn adjustment_preserves_connectivity_and_count_on_random_blobs() {
    let mut rng = rng_from(77);
    for _ in 0..30 {
        let spec = MaskSpec::new(
            ShapeKind::FourierBlob,
            24,
            24,
            rng.random_range(0.05..0.6),
            rng.random(),
        )
        .unwrap();
        let base = generate_mask(&spec).unwrap();
        let delta = rng.random_range(-8i64..=8);
        let target = (base.foreground_count() as i64 + delta).max(0) as usize;
        if target > 24 * 24 {
            continue;
        }
        let adjusted = adjust_area(&base, target, &mut rng).unwrap();
        assert_eq!(adjusted.foreground_count(), target);
        assert!(adjusted.is_connected());
    }
}

#[test]
fn adjustment_rejects_oversized_gaps() {
    let m = mask_from(&["#.......", "........", "........", "........"]);
    let mut rng = rng_from(3);
    // 5% of a 4x8 frame is 1.6 pixels; asking for 20 more is out of contract.
    let err = adjust_area(&m, 21, &mut rng).unwrap_err();
    assert!(matches!(err, Error::ContractViolation(_)));
}

#[test]
fn shrinking_a_thin_loop_uses_the_global_fallback() {
    // Every pixel of a one-pixel-wide ring fails the local simple-point test,
    // yet removing any single one keeps the ring connected.
    let m = mask_from(&[
        "......", ".####.", ".#..#.", ".#..#.", ".####.", "......",
    ]);
    assert_eq!(component_count(&m), 1);
    let mut rng = rng_from(5);
    let adjusted = adjust_area(&m, m.foreground_count() - 1, &mut rng).unwrap();
    assert_eq!(adjusted.foreground_count(), m.foreground_count() - 1);
    assert_eq!(component_count(&adjusted), 1);
}

// -------------------------------------------------------------------------
// End-to-end generation
// -------------------------------------------------------------------------

#[test]
fn generated_masks_have_exact_counts() {
    for (i, kind) in ShapeKind::ALL.into_iter().enumerate() {
        for ratio in [0.01, 0.1, 0.3, 0.5, 0.85] {
            let spec = MaskSpec::new(kind, 48, 48, ratio, 1000 + i as u64).unwrap();
            let m = generate_mask(&spec).unwrap();
            assert_eq!(m.foreground_count(), spec.target_count(), "{kind} r={ratio}");
            assert_eq!(component_count(&m), 1, "{kind} r={ratio}");
            assert_eq!(m.height(), 48);
            assert_eq!(m.width(), 48);
        }
    }
}

#[test]
fn zero_ratio_gives_an_empty_mask() {
    let spec = MaskSpec::new(ShapeKind::Ellipse, 16, 16, 0.0, 9).unwrap();
    let m = generate_mask(&spec).unwrap();
    assert_eq!(m.foreground_count(), 0);
}

#[test]
fn full_ratio_fills_the_frame() {
    let spec = MaskSpec::new(ShapeKind::ConcavePolygon, 16, 16, 1.0, 10).unwrap();
    let m = generate_mask(&spec).unwrap();
    assert_eq!(m.foreground_count(), 256);
}

#[test]
fn tiny_targets_still_come_out_exact() {
    for seed in 0..20u64 {
        // round(0.002 * 4096) = 8 pixels.
        let spec = MaskSpec::new(ShapeKind::Ellipse, 64, 64, 0.002, seed).unwrap();
        let m = generate_mask(&spec).unwrap();
        assert_eq!(m.foreground_count(), 8, "seed {seed}");
        assert_eq!(component_count(&m), 1, "seed {seed}");
    }
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let spec = MaskSpec::new(ShapeKind::ConvexPolygon, 32, 32, 0.25, 12345).unwrap();
    let a = generate_mask(&spec).unwrap();
    let b = generate_mask(&spec).unwrap();
    assert_eq!(a, b);
    let other = MaskSpec::new(ShapeKind::ConvexPolygon, 32, 32, 0.25, 54321).unwrap();
    assert_ne!(generate_mask(&other).unwrap(), a);
}

#[test]
fn rounding_matches_the_documented_rule() {
    // round(0.3 * 64 * 64) = 1229, the canonical example.
    let spec = MaskSpec::new(ShapeKind::Ellipse, 64, 64, 0.3, 0).unwrap();
    assert_eq!(spec.target_count(), 1229);
}

#[test]
fn mixture_construction_validates() {
    assert!(RatioMixture::new(vec![]).is_err());
    assert!(RatioMixture::new(vec![RatioBucket {
        probability: 0.5,
        lo: 0.0,
        hi: 1.0
    }])
    .is_err());
    assert!(RatioMixture::new(vec![RatioBucket {
        probability: 1.0,
        lo: 0.4,
        hi: 0.2
    }])
    .is_err());
    assert!(RatioMixture::new(vec![RatioBucket {
        probability: 1.0,
        lo: 0.5,
        hi: 1.5
    }])
    .is_err());
}
