//! Affine augmentation of masked reference frames.
//!
//! One random affine transform — horizontal flip, then shear, rotation and
//! scale about the foreground centroid, then translation — is applied
//! identically to an image and its mask. Parameters are resampled until the
//! transformed foreground fits strictly inside the frame, so augmented
//! references never lose content across the border. Images are warped with
//! bilinear interpolation (out-of-frame reads are 0, the masked-background
//! value), masks with nearest-neighbor so they stay exactly binary.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

// =========================================================================
// Parameters and configuration
// =========================================================================

/// One concrete affine draw. Angles are in degrees, translation in pixels
/// (`dx` along columns, `dy` along rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear_deg: f64,
    pub translate: (f64, f64),
    pub hflip: bool,
}

impl AffineParams {
    pub fn identity() -> AffineParams {
        AffineParams {
            rotation_deg: 0.0,
            scale: 1.0,
            shear_deg: 0.0,
            translate: (0.0, 0.0),
            hflip: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == AffineParams::identity()
    }
}

/// Sampling ranges for [`sample_affine`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotation_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub shear_range: (f64, f64),
    pub hflip_prob: f64,
    pub max_resample_attempts: u32,
}

impl Default for AugmentConfig {
    fn default() -> AugmentConfig {
        AugmentConfig {
            rotation_range: (-10.0, 10.0),
            scale_range: (0.8, 2.0),
            shear_range: (-10.0, 10.0),
            hflip_prob: 0.5,
            max_resample_attempts: 16,
        }
    }
}

impl AugmentConfig {
    /// The disabled-augmentation ablation: every draw is the identity.
    pub fn disabled() -> AugmentConfig {
        AugmentConfig {
            rotation_range: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            shear_range: (0.0, 0.0),
            hflip_prob: 0.0,
            max_resample_attempts: 1,
        }
    }

    pub fn is_disabled(&self) -> bool {
        *self == AugmentConfig::disabled()
    }

    /// True when every range is degenerate at the identity transform, so
    /// sampling could only ever produce the identity.
    pub fn is_identity_only(&self) -> bool {
        self.rotation_range == (0.0, 0.0)
            && self.scale_range == (1.0, 1.0)
            && self.shear_range == (0.0, 0.0)
            && self.hflip_prob == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ok_range(self.rotation_range)
            || !ok_range(self.scale_range)
            || !ok_range(self.shear_range)
        {
            return Err(Error::InvalidConfig("empty augmentation range".into()));
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::InvalidConfig("scale range must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidConfig(format!(
                "hflip probability {} outside [0, 1]",
                self.hflip_prob
            )));
        }
        Ok(())
    }
}

/// The augmented reference triple: warped image, warped mask, and their
/// elementwise product (what actually enters the codec).
#[derive(Debug, Clone)]
pub struct MaskedReference {
    pub image: Array3<f64>,
    pub mask: BinaryMask,
    pub masked_frame: Array3<f64>,
    pub params: AffineParams,
}

// =========================================================================
// The affine map
// =========================================================================

/// Row-major 2x3 affine on (x, y) = (col, row) coordinates:
/// `x' = a x + b y + e`, `y' = c x + d y + f`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine2 {
    a: f64,
    b: f64,
    e: f64,
    c: f64,
    d: f64,
    f: f64,
}

impl Affine2 {
    pub(crate) fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.e,
            self.c * x + self.d * y + self.f,
        )
    }

    pub(crate) fn invert(&self) -> Result<Affine2> {
        let det = self.a * self.d - self.b * self.c;
        if det.abs() < 1e-12 {
            return Err(Error::ContractViolation(format!(
                "affine map is singular (det {det})"
            )));
        }
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(Affine2 {
            a: ia,
            b: ib,
            c: ic,
            d: id,
            e: -(ia * self.e + ib * self.f),
            f: -(ic * self.e + id * self.f),
        })
    }
}

/// Build the forward map for `params` on a `height` x `width` frame.
///
/// Composition order, fixed: horizontal flip about the frame's vertical
/// axis, then shear, rotation and scale about `pivot` (the foreground
/// centroid, expressed in post-flip coordinates), then translation.
///
/// When the linear part is the identity (no rotation/shear, scale 1) the
/// pivot algebraically cancels and is dropped exactly, so identity and
/// flip-only parameter sets produce bit-exact pixel correspondences.
fn forward_map(params: &AffineParams, pivot: (f64, f64), width: usize) -> Affine2 {
    let (flip_a, flip_e) = if params.hflip {
        (-1.0, (width - 1) as f64)
    } else {
        (1.0, 0.0)
    };

    let linear_is_identity =
        params.rotation_deg == 0.0 && params.shear_deg == 0.0 && params.scale == 1.0;
    if linear_is_identity {
        return Affine2 {
            a: flip_a,
            b: 0.0,
            e: flip_e + params.translate.0,
            c: 0.0,
            d: 1.0,
            f: params.translate.1,
        };
    }

    // L = scale * R(theta) * Shear(sigma), acting on (x, y) with y down.
    let theta = params.rotation_deg.to_radians();
    let sigma = params.shear_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let sh = sigma.tan();
    let s = params.scale;
    let l00 = s * cos;
    let l01 = s * (cos * sh - sin);
    let l10 = s * sin;
    let l11 = s * (sin * sh + cos);

    // p' = L * (F(p) - q) + q + t, with F the flip and q the pivot.
    let (qx, qy) = (pivot.1, pivot.0);
    let (tx, ty) = params.translate;
    Affine2 {
        a: l00 * flip_a,
        b: l01,
        e: l00 * (flip_e - qx) - l01 * qy + qx + tx,
        c: l10 * flip_a,
        d: l11,
        f: l10 * (flip_e - qx) - l11 * qy + qy + ty,
    }
}

/// Pivot for the linear part: the foreground centroid after the flip. An
/// empty mask gets the frame center (the transform is content-free anyway).
fn flipped_centroid(mask: &BinaryMask, hflip: bool) -> (f64, f64) {
    let (h, w) = (mask.height(), mask.width());
    let (cy, cx) = mask
        .centroid()
        .unwrap_or(((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0));
    if hflip {
        (cy, (w - 1) as f64 - cx)
    } else {
        (cy, cx)
    }
}

// =========================================================================
// Sampling with containment
// =========================================================================

/// Convex hull of the foreground treated as unit cells (pixel centers
/// inflated by 0.5 in each direction), as (x, y) points.
fn foreground_hull(mask: &BinaryMask) -> Vec<(f64, f64)> {
    let mut corners: Vec<(f64, f64)> = Vec::new();
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                let (x, y) = (c as f64, r as f64);
                corners.push((x - 0.5, y - 0.5));
                corners.push((x + 0.5, y - 0.5));
                corners.push((x - 0.5, y + 0.5));
                corners.push((x + 0.5, y + 0.5));
            }
        }
    }
    convex_hull_xy(&corners)
}

fn convex_hull_xy(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // Andrew monotone chain; the lower and upper halves need separate
    // stacks so that closing the upper hull cannot pop lower-hull vertices.
    let half = |iter: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut chain: Vec<(f64, f64)> = Vec::new();
        for p in iter {
            while chain.len() >= 2 && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(p);
        }
        chain.pop();
        chain
    };
    let mut hull = half(&mut pts.iter().copied());
    hull.extend(half(&mut pts.iter().rev().copied()));
    hull
}

/// The box the transformed foreground must stay inside for the output mask
/// to have an empty 1-pixel border: cell coordinates in
/// `[0.5, W-1.5] x [0.5, H-1.5]`, shrunk by a small numeric guard.
const CONTAINMENT_GUARD: f64 = 1e-6;

fn containment_box(height: usize, width: usize) -> (f64, f64, f64, f64) {
    (
        0.5 + CONTAINMENT_GUARD,
        width as f64 - 1.5 - CONTAINMENT_GUARD,
        0.5 + CONTAINMENT_GUARD,
        height as f64 - 1.5 - CONTAINMENT_GUARD,
    )
}

/// Bounding box of the hull under the translation-free part of `params`.
fn transformed_hull_bbox(
    hull: &[(f64, f64)],
    params: &AffineParams,
    mask: &BinaryMask,
) -> (f64, f64, f64, f64) {
    let pivot = flipped_centroid(mask, params.hflip);
    let map = forward_map(
        &AffineParams {
            translate: (0.0, 0.0),
            ..*params
        },
        pivot,
        mask.width(),
    );
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in hull {
        let (px, py) = map.apply(x, y);
        x0 = x0.min(px);
        x1 = x1.max(px);
        y0 = y0.min(py);
        y1 = y1.max(py);
    }
    (x0, x1, y0, y1)
}

/// Draw affine parameters whose transformed foreground fits strictly inside
/// the frame.
///
/// Rotation, scale, shear and the flip are drawn uniformly from the config;
/// the translation is then drawn uniformly from the feasible interval that
/// keeps the transformed foreground hull inside [`containment_box`]. If no
/// feasible translation exists after `max_resample_attempts` draws, the
/// fallback is the identity when the foreground already sits strictly
/// inside, and otherwise a deterministic centered shrink-to-fit transform —
/// the one case where parameters may leave the configured scale range,
/// since containment is the stronger contract.
pub fn sample_affine(
    config: &AugmentConfig,
    mask: &BinaryMask,
    rng: &mut ChaCha8Rng,
) -> AffineParams {
    if mask.foreground_count() == 0 || config.is_identity_only() {
        return AffineParams::identity();
    }
    let hull = foreground_hull(mask);
    let (bx0, bx1, by0, by1) = containment_box(mask.height(), mask.width());

    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };

    for _ in 0..config.max_resample_attempts.max(1) {
        let mut params = AffineParams {
            rotation_deg: uniform(rng, config.rotation_range),
            scale: uniform(rng, config.scale_range),
            shear_deg: uniform(rng, config.shear_range),
            translate: (0.0, 0.0),
            hflip: rng.random_bool(config.hflip_prob),
        };
        let (x0, x1, y0, y1) = transformed_hull_bbox(&hull, &params, mask);
        let (tx_lo, tx_hi) = (bx0 - x0, bx1 - x1);
        let (ty_lo, ty_hi) = (by0 - y0, by1 - y1);
        if tx_lo <= tx_hi && ty_lo <= ty_hi {
            params.translate = (uniform(rng, (tx_lo, tx_hi)), uniform(rng, (ty_lo, ty_hi)));
            return params;
        }
    }

    // Fallback: identity when it already satisfies containment.
    let identity = AffineParams::identity();
    let (x0, x1, y0, y1) = transformed_hull_bbox(&hull, &identity, mask);
    if x0 >= bx0 && x1 <= bx1 && y0 >= by0 && y1 <= by1 {
        return identity;
    }

    // Otherwise shrink the foreground until it fits, centered in the frame.
    let fit = ((bx1 - bx0) / (x1 - x0))
        .min((by1 - by0) / (y1 - y0))
        .min(1.0)
        * 0.97;
    let mut params = AffineParams {
        scale: fit,
        ..identity
    };
    let (sx0, sx1, sy0, sy1) = transformed_hull_bbox(&hull, &params, mask);
    params.translate = (
        0.5 * ((bx0 + bx1) - (sx0 + sx1)),
        0.5 * ((by0 + by1) - (sy0 + sy1)),
    );
    params
}

// =========================================================================
// Warping
// =========================================================================

/// Warp an image/mask pair by the same affine map (bit-identical
/// coefficients for both). The image is sampled bilinearly with out-of-frame
/// reads returning 0; the mask is sampled nearest-neighbor, so it stays
/// exactly binary.
pub fn apply_affine(
    image: &Array3<f64>,
    mask: &BinaryMask,
    params: &AffineParams,
) -> Result<(Array3<f64>, BinaryMask)> {
    let (h, w, ch) = image.dim();
    if h != mask.height() || w != mask.width() {
        return Err(Error::ContractViolation(format!(
            "image {h}x{w} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    if ch != 3 {
        return Err(Error::ContractViolation(format!(
            "expected 3 image channels, got {ch}"
        )));
    }

    let pivot = flipped_centroid(mask, params.hflip);
    let inverse = forward_map(params, pivot, w).invert()?;

    let mut out_image = Array3::<f64>::zeros((h, w, 3));
    let mut out_mask = BinaryMask::new_empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let (sx, sy) = inverse.apply(c as f64, r as f64);

            // Nearest-neighbor mask lookup.
            let (nr, nc) = (sy.round(), sx.round());
            if nr >= 0.0 && nc >= 0.0 && (nr as usize) < h && (nc as usize) < w {
                out_mask.set(r, c, mask.get(nr as usize, nc as usize));
            }

            // Bilinear image lookup with zero padding.
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |yy: f64, xx: f64, k: usize| -> f64 {
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                    image[[yy as usize, xx as usize, k]]
                } else {
                    0.0
                }
            };
            for k in 0..3 {
                let v00 = sample(y0, x0, k);
                let v01 = sample(y0, x0 + 1.0, k);
                let v10 = sample(y0 + 1.0, x0, k);
                let v11 = sample(y0 + 1.0, x0 + 1.0, k);
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bottom = v10 * (1.0 - fx) + v11 * fx;
                out_image[[r, c, k]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok((out_image, out_mask))
}

/// Build one augmented reference from a video frame and its mask: sample an
/// affine (identity under the disabled-augmentation ablation), warp both,
/// and form `masked_frame = image' ⊙ mask'`.
pub fn make_masked_reference(
    frame: &Array3<f64>,
    mask: &BinaryMask,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedReference> {
    let params = if config.is_disabled() {
        AffineParams::identity()
    } else {
        sample_affine(config, mask, rng)
    };
    let (image, warped_mask) = apply_affine(frame, mask, &params)?;
    let mut masked_frame = image.clone();
    for r in 0..warped_mask.height() {
        for c in 0..warped_mask.width() {
            if !warped_mask.get(r, c) {
                for k in 0..3 {
                    masked_frame[[r, c, k]] = 0.0;
                }
            }
        }
    }
    Ok(MaskedReference {
        image,
        mask: warped_mask,
        masked_frame,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{generate_mask, raster_shape, MaskSpec, ShapeKind, ShapeParams};
    use crate::seeds::rng_from;

    fn gradient_image(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            let v = (r * w + c) as f64 / (h * w) as f64;
            2.0 * ((v + 0.1 * k as f64).fract()) - 1.0
        })
    }

    fn disc_mask(h: usize, w: usize, cy: f64, cx: f64, radius: f64) -> BinaryMask {
        let params = ShapeParams::ellipse(1.0, 0.0).unwrap();
        raster_shape(&params, (cy, cx), radius, h, w).unwrap()
    }

    #[test]
    fn identity_params_return_inputs_bit_identical() {
        let image = gradient_image(24, 24);
        let mask = disc_mask(24, 24, 12.0, 12.0, 6.0);
        let (img2, mask2) = apply_affine(&image, &mask, &AffineParams::identity()).unwrap();
        assert_eq!(img2, image);
        assert_eq!(mask2, mask);
    }

    #[test]
    fn hflip_mirrors_across_the_frame_axis() {
        let image = gradient_image(16, 20);
        let mask = disc_mask(16, 20, 8.0, 7.0, 4.0);
        let params = AffineParams {
            hflip: true,
            ..AffineParams::identity()
        };
        let (img2, mask2) = apply_affine(&image, &mask, &params).unwrap();
        for r in 0..16 {
            for c in 0..20 {
                for k in 0..3 {
                    assert_eq!(img2[[r, c, k]], image[[r, 19 - c, k]]);
                }
                assert_eq!(mask2.get(r, c), mask.get(r, 19 - c));
            }
        }
    }

    #[test]
    fn rotation_scale_matches_directly_rasterized_disc() {
        // A disc is rotation-invariant, so rotating and scaling it must give
        // (up to boundary aliasing) the directly rasterized scaled disc.
        let mask = disc_mask(64, 64, 32.0, 32.0, 10.0);
        let params = AffineParams {
            rotation_deg: 10.0,
            scale: 1.3,
            ..AffineParams::identity()
        };
        let image = gradient_image(64, 64);
        let (_, mask2) = apply_affine(&image, &mask, &params).unwrap();
        let expected = 1.3f64.powi(2) * mask.foreground_count() as f64;
        let got = mask2.foreground_count() as f64;
        assert!(
            (got - expected).abs() < 0.05 * expected,
            "count {got} vs expected {expected}"
        );
    }

    #[test]
    fn sampled_params_keep_the_foreground_strictly_inside() {
        let mut rng = rng_from(21);
        let config = AugmentConfig::default();
        let image = gradient_image(48, 48);
        for seed in 0..40u64 {
            let spec = MaskSpec::new(
                ShapeKind::ALL[(seed % 4) as usize],
                48,
                48,
                0.05 + 0.02 * (seed % 10) as f64,
                seed,
            )
            .unwrap();
            let mask = generate_mask(&spec).unwrap();
            let params = sample_affine(&config, &mask, &mut rng);
            let (_, mask2) = apply_affine(&image, &mask, &params).unwrap();
            assert!(mask2.foreground_count() > 0, "seed {seed}: emptied out");
            for r in 0..48 {
                for c in 0..48 {
                    if mask2.get(r, c) {
                        assert!(
                            r > 0 && r < 47 && c > 0 && c < 47,
                            "seed {seed}: foreground on border at ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hull_keeps_every_axis_extreme_point() {
        // Axis extremes are always hull vertices, so the hull's bounding box
        // must equal the raw point cloud's bounding box.
        let mut rng = rng_from(40);
        for trial in 0..200 {
            let n = rng.random_range(3..40);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                    )
                })
                .collect();
            let hull = convex_hull_xy(&pts);
            for pick in [
                |p: &(f64, f64)| p.0,
                |p: &(f64, f64)| -p.0,
                |p: &(f64, f64)| p.1,
                |p: &(f64, f64)| -p.1,
            ] {
                let raw = pts.iter().map(pick).fold(f64::NEG_INFINITY, f64::max);
                let hulled = hull.iter().map(pick).fold(f64::NEG_INFINITY, f64::max);
                assert!(
                    (raw - hulled).abs() < 1e-12,
                    "trial {trial}: extreme {raw} vs hull {hulled}"
                );
            }
        }
    }

    #[test]
    fn small_frames_with_border_hugging_masks_stay_contained() {
        // On an 8x8 frame the generated shape regularly touches the frame
        // border, so containment leans entirely on the sampled affine.
        let image = gradient_image(8, 8);
        let config = AugmentConfig::default();
        for seed in 0..800u64 {
            let mut rng = rng_from(seed);
            let ratio = 0.05 + 0.4 * (seed % 7) as f64 / 6.0;
            let kind = ShapeKind::ALL[(seed % 4) as usize];
            let Ok(spec) = MaskSpec::new(kind, 8, 8, ratio, seed) else {
                continue;
            };
            let Ok(mask) = generate_mask(&spec) else {
                continue;
            };
            let m = make_masked_reference(&image, &mask, &config, &mut rng).unwrap();
            for r in 0..8 {
                for c in 0..8 {
                    if m.mask.get(r, c) {
                        assert!(
                            r > 0 && r < 7 && c > 0 && c < 7,
                            "seed {seed}: foreground on border at ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn full_frame_mask_falls_back_to_a_contained_transform() {
        // A mask covering the whole frame can never satisfy containment
        // under identity; the fallback must shrink it inside.
        let mut full = BinaryMask::new_empty(32, 32);
        for r in 0..32 {
            for c in 0..32 {
                full.set(r, c, true);
            }
        }
        let mut rng = rng_from(3);
        let params = sample_affine(&AugmentConfig::default(), &full, &mut rng);
        let image = gradient_image(32, 32);
        let (_, mask2) = apply_affine(&image, &full, &params).unwrap();
        assert!(mask2.foreground_count() > 0);
        for r in 0..32 {
            for c in 0..32 {
                if mask2.get(r, c) {
                    assert!(r > 0 && r < 31 && c > 0 && c < 31);
                }
            }
        }
    }

    #[test]
    fn degenerate_config_always_returns_identity() {
        let config = AugmentConfig::disabled();
        let mask = disc_mask(16, 16, 8.0, 8.0, 3.0);
        let mut rng = rng_from(9);
        for _ in 0..8 {
            assert!(sample_affine(&config, &mask, &mut rng).is_identity());
        }
    }

    #[test]
    fn masked_reference_is_zero_off_mask() {
        let mut rng = rng_from(17);
        let image = gradient_image(32, 32);
        let spec = MaskSpec::new(ShapeKind::FourierBlob, 32, 32, 0.2, 5).unwrap();
        let mask = generate_mask(&spec).unwrap();
        let reference =
            make_masked_reference(&image, &mask, &AugmentConfig::default(), &mut rng).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                if !reference.mask.get(r, c) {
                    for k in 0..3 {
                        assert_eq!(reference.masked_frame[[r, c, k]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn disabled_config_reproduces_the_plain_masked_frame() {
        let mut rng = rng_from(2);
        let image = gradient_image(20, 20);
        let mask = disc_mask(20, 20, 10.0, 10.0, 5.0);
        let reference =
            make_masked_reference(&image, &mask, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert!(reference.params.is_identity());
        for r in 0..20 {
            for c in 0..20 {
                for k in 0..3 {
                    let expected = if mask.get(r, c) { image[[r, c, k]] } else { 0.0 };
                    assert_eq!(reference.masked_frame[[r, c, k]], expected);
                }
            }
        }
    }

    #[test]
    fn empty_mask_produces_an_all_zero_reference() {
        let mut rng = rng_from(1);
        let image = gradient_image(16, 16);
        let empty = BinaryMask::new_empty(16, 16);
        let reference =
            make_masked_reference(&image, &empty, &AugmentConfig::default(), &mut rng).unwrap();
        assert_eq!(reference.mask.foreground_count(), 0);
        assert!(reference.masked_frame.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let image = gradient_image(16, 16);
        let mask = BinaryMask::new_empty(8, 8);
        assert!(apply_affine(&image, &mask, &AffineParams::identity()).is_err());
    }
}
