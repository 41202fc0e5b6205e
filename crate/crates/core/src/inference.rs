//! Zero-shot generation: reference preprocessing and the Euler sampler.
//!
//! A user-supplied reference image is reduced to a masked reference (its
//! subject cut out, or the whole frame for scene references), fitted to the
//! output resolution, and encoded. Sampling then integrates the learned
//! velocity field from gaussian noise at `t = 1` down to `t = 0` with an
//! explicit Euler scheme and optional classifier-free guidance. Reference
//! slots carry their clean latents at every step; only the video slots are
//! noised.

use ndarray::{Array3, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codec::{
    encode_text, latent_frames, resize_mask_to_latent, CodecConfig, MockCodec, VideoLatent,
};
use crate::conditioning::AttentionMask;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{assemble_for_model, ConditioningBundle, ToyDiT};
use crate::seeds::{mix, rng_from};

// =========================================================================
// Subject segmentation
// =========================================================================

/// A reference image with no discernible subject (color spread below this
/// threshold) cannot be segmented.
const MIN_COLOR_SPREAD: f64 = 0.1;

/// Cut the subject out of a reference image without any learned machinery:
/// the background color is estimated as the channel-wise median of the
/// border pixels, and a pixel belongs to the subject when its color sits
/// further than half the maximum observed distance from that background.
pub fn segment_subject(image: &Array3<f64>) -> Result<BinaryMask> {
    let (h, w, ch) = image.dim();
    if ch != 3 || h < 2 || w < 2 {
        return Err(Error::ContractViolation(format!(
            "expected an H x W x 3 image with H, W >= 2, got {h}x{w}x{ch}"
        )));
    }

    let mut background = [0.0f64; 3];
    for (k, bg) in background.iter_mut().enumerate() {
        let mut border: Vec<f64> = Vec::with_capacity(2 * (h + w));
        for r in 0..h {
            for c in 0..w {
                if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                    border.push(image[[r, c, k]]);
                }
            }
        }
        border.sort_by(f64::total_cmp);
        let n = border.len();
        *bg = if n % 2 == 1 {
            border[n / 2]
        } else {
            0.5 * (border[n / 2 - 1] + border[n / 2])
        };
    }

    let distance = |r: usize, c: usize| -> f64 {
        (0..3)
            .map(|k| (image[[r, c, k]] - background[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut d_max = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            d_max = d_max.max(distance(r, c));
        }
    }
    if d_max < MIN_COLOR_SPREAD {
        return Err(Error::EmptySegmentation(format!(
            "color spread {d_max:.4} below {MIN_COLOR_SPREAD}; no subject stands out"
        )));
    }

    let threshold = 0.5 * d_max;
    let mut mask = BinaryMask::new_empty(h, w);
    for r in 0..h {
        for c in 0..w {
            if distance(r, c) > threshold {
                mask.set(r, c, true);
            }
        }
    }
    Ok(mask)
}

// =========================================================================
// Fitting a reference to the output resolution
// =========================================================================

/// Bilinear read with clamped coordinates.
fn bilinear(image: &Array3<f64>, y: f64, x: f64, k: usize) -> f64 {
    let (h, w, _) = image.dim();
    let cl = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let (y, x) = (cl(y, h), cl(x, w));
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| image[[cl(yy, h) as usize, cl(xx, w) as usize, k]];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Scale an image/mask pair to fit inside `target_h x target_w` (preserving
/// aspect ratio, bilinear for the image, nearest for the mask) and center it
/// on a zero canvas. A pair already at the target size passes through
/// bit-identically, so the operation is idempotent.
pub fn resize_and_pad(
    image: &Array3<f64>,
    mask: &BinaryMask,
    target_h: usize,
    target_w: usize,
) -> Result<(Array3<f64>, BinaryMask)> {
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(Error::ContractViolation(format!(
            "expected 3 channels, got {ch}"
        )));
    }
    if h != mask.height() || w != mask.width() {
        return Err(Error::ContractViolation(format!(
            "image {h}x{w} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::ContractViolation("empty target".into()));
    }

    let scale = (target_h as f64 / h as f64).min(target_w as f64 / w as f64);
    let out_h = ((h as f64 * scale).round() as usize).clamp(1, target_h);
    let out_w = ((w as f64 * scale).round() as usize).clamp(1, target_w);
    let (top, left) = ((target_h - out_h) / 2, (target_w - out_w) / 2);

    let mut out_image = Array3::<f64>::zeros((target_h, target_w, 3));
    let mut out_mask = BinaryMask::new_empty(target_h, target_w);
    let exact = out_h == h && out_w == w;
    for r in 0..out_h {
        for c in 0..out_w {
            if exact {
                // The scale-1 path copies instead of resampling so that
                // already-fitted references stay bit-identical.
                for k in 0..3 {
                    out_image[[top + r, left + c, k]] = image[[r, c, k]];
                }
                out_mask.set(top + r, left + c, mask.get(r, c));
            } else {
                // Align pixel centers: dst center (i+0.5) maps to
                // src (i+0.5)/s.
                let sy = (r as f64 + 0.5) * h as f64 / out_h as f64 - 0.5;
                let sx = (c as f64 + 0.5) * w as f64 / out_w as f64 - 0.5;
                for k in 0..3 {
                    out_image[[top + r, left + c, k]] = bilinear(image, sy, sx, k);
                }
                let ny = (sy.round().max(0.0) as usize).min(h - 1);
                let nx = (sx.round().max(0.0) as usize).min(w - 1);
                out_mask.set(top + r, left + c, mask.get(ny, nx));
            }
        }
    }
    Ok((out_image, out_mask))
}

// =========================================================================
// Reference preparation
// =========================================================================

/// How a reference image conditions the generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMode {
    /// A subject cut-out: the mask (given or segmented) selects the content.
    Subject,
    /// A whole-scene reference: the entire frame is valid content.
    BackgroundScene,
}

/// One user-supplied reference.
#[derive(Debug, Clone)]
pub struct ReferenceInput {
    pub image: Array3<f64>,
    /// Optional pre-made mask; `None` invokes [`segment_subject`] for
    /// subject references.
    pub mask: Option<BinaryMask>,
    pub mode: RefMode,
}

/// A reference fitted to the output resolution: masked content on a zero
/// canvas plus the fitted mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedReference {
    pub masked_image: Array3<f64>,
    pub mask: BinaryMask,
}

/// Mask, fit and zero-fill one reference for a `target_h x target_w` output.
pub fn prepare_reference(
    input: &ReferenceInput,
    target_h: usize,
    target_w: usize,
) -> Result<PreparedReference> {
    let (h, w, _) = input.image.dim();
    let mask = match (&input.mode, &input.mask) {
        (RefMode::BackgroundScene, _) => {
            let mut all = BinaryMask::new_empty(h, w);
            for r in 0..h {
                for c in 0..w {
                    all.set(r, c, true);
                }
            }
            all
        }
        (RefMode::Subject, Some(m)) => m.clone(),
        (RefMode::Subject, None) => segment_subject(&input.image)?,
    };
    let (image, mask) = resize_and_pad(&input.image, &mask, target_h, target_w)?;
    let mut masked_image = image;
    for r in 0..target_h {
        for c in 0..target_w {
            if !mask.get(r, c) {
                for k in 0..3 {
                    masked_image[[r, c, k]] = 0.0;
                }
            }
        }
    }
    Ok(PreparedReference { masked_image, mask })
}

// =========================================================================
// The sampler
// =========================================================================

/// Anything that predicts a velocity field over video tokens.
pub trait VelocityModel {
    fn velocity(
        &self,
        z_t: &VideoLatent,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
    ) -> Result<Array4<f64>>;
}

impl VelocityModel for ToyDiT {
    fn velocity(
        &self,
        z_t: &VideoLatent,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
    ) -> Result<Array4<f64>> {
        let assembled = assemble_for_model(z_t, cond)?;
        self.forward(&assembled, cond, mask)
    }
}

/// Closed-form velocity field whose Euler integral lands exactly on a fixed
/// target latent from any start, for any step count: `v = (target − z) / t`.
/// Used to verify the sampler's time grid and update arithmetic.
#[derive(Debug, Clone)]
pub struct PointTargetModel {
    pub target: VideoLatent,
}

impl VelocityModel for PointTargetModel {
    fn velocity(
        &self,
        z_t: &VideoLatent,
        cond: &ConditioningBundle,
        _mask: &AttentionMask,
    ) -> Result<Array4<f64>> {
        let t = cond.timestep;
        if t <= 0.0 {
            return Err(Error::ContractViolation(format!(
                "analytic velocity undefined at t = {t}"
            )));
        }
        Ok((&self.target.data - &z_t.data) / t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Classifier-free guidance strength; 1 disables the unconditional
    /// branch entirely.
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> SamplerConfig {
        SamplerConfig {
            steps: 50,
            guidance_scale: 5.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("sampler needs at least 1 step".into()));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "guidance scale {} is not finite",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// Integrate the velocity field from seeded gaussian noise at `t = 1` down
/// to `t = 0` over the uniform grid `t_i = 1 − i/steps`.
///
/// With guidance `s ≠ 1` each step combines the conditional and
/// unconditional predictions as `v = v_u + s (v_c − v_u)`; `uncond` differs
/// from `cond` only in its text features (references stay attached), and is
/// required exactly when `s ≠ 1`.
pub fn sample_latent<M: VelocityModel>(
    model: &M,
    cond: &ConditioningBundle,
    uncond: Option<&ConditioningBundle>,
    attn: &AttentionMask,
    shape: (usize, usize, usize, usize),
    cfg: &SamplerConfig,
) -> Result<VideoLatent> {
    cfg.validate()?;
    let guided = cfg.guidance_scale != 1.0;
    if guided && uncond.is_none() {
        return Err(Error::InvalidConfig(
            "guidance needs an unconditional bundle".into(),
        ));
    }

    let mut rng = rng_from(mix(cfg.seed, 0x7361_6d70));
    let mut z = VideoLatent {
        data: Array4::from_shape_fn(shape, |_| rng.sample(StandardNormal)),
    };

    let steps = cfg.steps as f64;
    for i in 0..cfg.steps {
        let t = 1.0 - i as f64 / steps;
        let t_next = 1.0 - (i + 1) as f64 / steps;
        let at = |bundle: &ConditioningBundle| ConditioningBundle {
            timestep: t,
            ..bundle.clone()
        };
        let v_c = model.velocity(&z, &at(cond), attn)?;
        let v = if guided {
            let v_u = model.velocity(&z, &at(uncond.expect("checked above")), attn)?;
            &v_u + &((&v_c - &v_u) * cfg.guidance_scale)
        } else {
            v_c
        };
        z.data = z.data + v * (t - t_next);
    }
    Ok(z)
}

// =========================================================================
// End-to-end generation
// =========================================================================

/// A full generation task: prompt, references, output geometry.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: String,
    pub references: Vec<ReferenceInput>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Outcome of a generation: decoded video, final latent, and the prepared
/// references (useful for inspection and contact sheets).
#[derive(Debug, Clone)]
pub struct GenerationResult {
    /// `frames x height x width x 3`, values in [−1, 1].
    pub video: Array4<f64>,
    pub latent: VideoLatent,
    pub references: Vec<PreparedReference>,
}

/// Generate a video with the toy model: prepare and encode the references,
/// run the guided sampler, decode, and trim the codec's temporal padding.
pub fn generate_video(
    model: &ToyDiT,
    request: &GenerationRequest,
    sampler: &SamplerConfig,
) -> Result<GenerationResult> {
    sampler.validate()?;
    let mcfg = model.config();
    let p = mcfg.codec_patch;
    if request.frames == 0 {
        return Err(Error::InvalidConfig("need at least 1 frame".into()));
    }
    if request.height == 0 || request.width == 0 || request.height % p != 0 || request.width % p != 0
    {
        return Err(Error::InvalidConfig(format!(
            "output {}x{} must be a positive multiple of the codec patch {p}",
            request.height, request.width
        )));
    }
    if request.references.len() > 8 {
        return Err(Error::InvalidConfig(format!(
            "{} references exceed the supported maximum of 8",
            request.references.len()
        )));
    }

    let codec = MockCodec::new(CodecConfig::new(p, mcfg.codec_seed)?);
    let (h, w) = (request.height / p, request.width / p);
    let f_hat = latent_frames(request.frames);

    let mut prepared = Vec::with_capacity(request.references.len());
    let mut refs = Vec::with_capacity(request.references.len());
    for input in &request.references {
        let fitted = prepare_reference(input, request.height, request.width)?;
        let z_ref = codec.encode_reference(&fitted.masked_image)?;
        let m_lat = resize_mask_to_latent(&fitted.mask, h, w)?;
        refs.push((z_ref, m_lat));
        prepared.push(fitted);
    }

    let text = encode_text(&request.prompt, mcfg.text_dim, mcfg.vocab_seed);
    let cond = ConditioningBundle {
        text,
        refs: refs.clone(),
        timestep: 0.0,
    };
    let uncond = ConditioningBundle {
        text: encode_text("", mcfg.text_dim, mcfg.vocab_seed),
        refs,
        timestep: 0.0,
    };
    let attn = cond.attention_mask(f_hat, h, w);

    let latent = sample_latent(
        model,
        &cond,
        Some(&uncond),
        &attn,
        (f_hat, h, w, mcfg.latent_dim),
        sampler,
    )?;
    let decoded = codec.decode_video(&latent)?;
    // The temporal grouping decodes `f_hat` latent frames to `4 f_hat − 3`
    // pixel frames, up to 3 short of the request; mirror the codec's
    // lead-frame replication to fill the gap.
    let deficit = request.frames - decoded.dim().0;
    let mut video = Array4::<f64>::zeros((request.frames, request.height, request.width, 3));
    for f in 0..request.frames {
        let src = f.saturating_sub(deficit);
        video
            .index_axis_mut(ndarray::Axis(0), f)
            .assign(&decoded.index_axis(ndarray::Axis(0), src));
    }
    Ok(GenerationResult {
        video,
        latent,
        references: prepared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::TextFeatures;
    use crate::model::ModelConfig;
    use ndarray::Array2;

    fn uniform_image(h: usize, w: usize, color: [f64; 3]) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(_, _, k)| color[k])
    }

    /// Anti-aliased disc on a uniform background, rendered the same way the
    /// synthetic dataset rasterizes shapes (signed distance, 1 px ramp).
    fn disc_image(
        h: usize,
        w: usize,
        center: (f64, f64),
        radius: f64,
        fg: [f64; 3],
        bg: [f64; 3],
    ) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
            let sdf = ((py - center.0).powi(2) + (px - center.1).powi(2)).sqrt() - radius;
            let cov = (0.5 - sdf).clamp(0.0, 1.0);
            bg[k] + cov * (fg[k] - bg[k])
        })
    }

    // ---------------------------------------------------------------------
    // Segmentation
    // ---------------------------------------------------------------------

    #[test]
    fn segmentation_recovers_a_disc_within_three_percent() {
        let center = (16.0, 17.0);
        let radius = 9.0;
        let image = disc_image(32, 32, center, radius, [0.9, -0.8, -0.8], [0.2, 0.2, 0.2]);
        let mask = segment_subject(&image).unwrap();
        // Oracle: pixels whose center falls inside the disc.
        let mut inside = 0usize;
        for r in 0..32 {
            for c in 0..32 {
                let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
                let d = ((py - center.0).powi(2) + (px - center.1).powi(2)).sqrt();
                let exp = d < radius;
                if exp {
                    inside += 1;
                }
            }
        }
        let got = mask.foreground_count() as f64;
        let want = inside as f64;
        assert!(
            (got - want).abs() <= 0.03 * want,
            "segmented {got} px vs disc {want} px"
        );
    }

    #[test]
    fn uniform_images_have_no_segmentable_subject() {
        let image = uniform_image(16, 16, [0.3, 0.3, 0.3]);
        match segment_subject(&image) {
            Err(Error::EmptySegmentation(_)) => {}
            other => panic!("expected an empty segmentation, got {other:?}"),
        }
    }

    #[test]
    fn segmentation_ignores_mild_background_noise() {
        let mut image = uniform_image(24, 24, [0.1, 0.1, 0.1]);
        // Speckle the background a little, then add a strong subject.
        for r in 0..24 {
            for c in 0..24 {
                image[[r, c, 0]] += 0.01 * ((r * 7 + c * 13) % 5) as f64 / 5.0;
            }
        }
        for r in 8..16 {
            for c in 8..16 {
                for (k, v) in [0.9, -0.9, 0.4].into_iter().enumerate() {
                    image[[r, c, k]] = v;
                }
            }
        }
        let mask = segment_subject(&image).unwrap();
        assert_eq!(mask.foreground_count(), 64);
        for r in 8..16 {
            for c in 8..16 {
                assert!(mask.get(r, c));
            }
        }
    }

    // ---------------------------------------------------------------------
    // Resize and pad
    // ---------------------------------------------------------------------

    fn ramp_image(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            0.01 * (r as f64) + 0.002 * (c as f64) + 0.1 * k as f64
        })
    }

    #[test]
    fn fit_without_scaling_centers_the_content_exactly() {
        // 32x64 into 64x64: the width binds at scale 1, so the rows are
        // copied bit-identically into a centered band.
        let image = ramp_image(32, 64);
        let mut mask = BinaryMask::new_empty(32, 64);
        for r in 10..20 {
            for c in 30..40 {
                mask.set(r, c, true);
            }
        }
        let (out, out_mask) = resize_and_pad(&image, &mask, 64, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                for k in 0..3 {
                    let expect = if (16..48).contains(&r) {
                        image[[r - 16, c, k]]
                    } else {
                        0.0
                    };
                    assert_eq!(out[[r, c, k]], expect, "({r},{c},{k})");
                }
                let expect_mask = (16..48).contains(&r) && mask.get(r.wrapping_sub(16), c);
                assert_eq!(out_mask.get(r, c), expect_mask);
            }
        }
    }

    #[test]
    fn fitting_is_idempotent() {
        let image = ramp_image(20, 44);
        let mut mask = BinaryMask::new_empty(20, 44);
        for r in 5..12 {
            for c in 8..30 {
                mask.set(r, c, true);
            }
        }
        let (once_img, once_mask) = resize_and_pad(&image, &mask, 32, 32).unwrap();
        let (twice_img, twice_mask) = resize_and_pad(&once_img, &once_mask, 32, 32).unwrap();
        assert_eq!(once_img, twice_img);
        assert_eq!(once_mask, twice_mask);
    }

    #[test]
    fn upscaling_interpolates_linear_ramps_exactly() {
        // Bilinear interpolation reproduces affine functions of the
        // coordinates away from the clamped border.
        let image = ramp_image(4, 4);
        let mask = BinaryMask::new_empty(4, 4);
        let (out, _) = resize_and_pad(&image, &mask, 8, 8).unwrap();
        for r in 1..7 {
            for c in 1..7 {
                let sy = (r as f64 + 0.5) / 2.0 - 0.5;
                let sx = (c as f64 + 0.5) / 2.0 - 0.5;
                let expect = 0.01 * sy + 0.002 * sx;
                assert!(
                    (out[[r, c, 0]] - expect).abs() < 1e-12,
                    "({r},{c}): {} vs {expect}",
                    out[[r, c, 0]]
                );
            }
        }
    }

    #[test]
    fn subject_mode_prefers_the_supplied_mask() {
        let image = uniform_image(16, 16, [0.5, 0.5, 0.5]);
        let mut mask = BinaryMask::new_empty(16, 16);
        for r in 4..8 {
            for c in 4..8 {
                mask.set(r, c, true);
            }
        }
        // Segmentation would fail on this uniform image; the supplied mask
        // must bypass it.
        let prepared = prepare_reference(
            &ReferenceInput {
                image: image.clone(),
                mask: Some(mask.clone()),
                mode: RefMode::Subject,
            },
            16,
            16,
        )
        .unwrap();
        assert_eq!(prepared.mask, mask);
        for r in 0..16 {
            for c in 0..16 {
                let expect = if mask.get(r, c) { 0.5 } else { 0.0 };
                assert_eq!(prepared.masked_image[[r, c, 0]], expect);
            }
        }
    }

    #[test]
    fn background_mode_keeps_the_whole_frame() {
        let image = ramp_image(16, 16);
        let prepared = prepare_reference(
            &ReferenceInput {
                image: image.clone(),
                mask: None,
                mode: RefMode::BackgroundScene,
            },
            16,
            16,
        )
        .unwrap();
        assert_eq!(prepared.mask.foreground_count(), 256);
        assert_eq!(prepared.masked_image, image);
    }

    // ---------------------------------------------------------------------
    // Sampler
    // ---------------------------------------------------------------------

    fn empty_bundle(text_dim: usize) -> ConditioningBundle {
        ConditioningBundle {
            text: TextFeatures {
                data: Array2::zeros((1, text_dim)),
            },
            refs: Vec::new(),
            timestep: 0.0,
        }
    }

    #[test]
    fn euler_grid_recovers_the_analytic_target_at_any_step_count() {
        let mut rng = rng_from(31);
        let target = VideoLatent {
            data: Array4::from_shape_fn((2, 3, 3, 5), |_| rng.sample::<f64, _>(StandardNormal)),
        };
        let model = PointTargetModel {
            target: target.clone(),
        };
        let cond = empty_bundle(4);
        let attn = cond.attention_mask(2, 3, 3);
        for steps in [1, 10, 50] {
            let cfg = SamplerConfig {
                steps,
                guidance_scale: 1.0,
                seed: 5,
            };
            let out = sample_latent(&model, &cond, None, &attn, (2, 3, 3, 5), &cfg).unwrap();
            let err = (&out.data - &target.data)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "steps {steps}: max error {err}");
        }
    }

    #[test]
    fn guidance_is_inert_when_both_branches_agree() {
        // The analytic model ignores text, so any guidance scale must give
        // the unguided answer back exactly.
        let mut rng = rng_from(37);
        let target = VideoLatent {
            data: Array4::from_shape_fn((1, 2, 2, 3), |_| rng.sample::<f64, _>(StandardNormal)),
        };
        let model = PointTargetModel {
            target: target.clone(),
        };
        let cond = empty_bundle(4);
        let attn = cond.attention_mask(1, 2, 2);
        let base = SamplerConfig {
            steps: 7,
            guidance_scale: 1.0,
            seed: 9,
        };
        let plain = sample_latent(&model, &cond, None, &attn, (1, 2, 2, 3), &base).unwrap();
        let guided_cfg = SamplerConfig {
            guidance_scale: 5.0,
            ..base
        };
        let guided =
            sample_latent(&model, &cond, Some(&cond), &attn, (1, 2, 2, 3), &guided_cfg).unwrap();
        let err = (&plain.data - &guided.data)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max deviation {err}");
    }

    #[test]
    fn sampler_matches_a_hand_rolled_euler_loop() {
        // Independent integration of the same trained-model velocity field,
        // including the guidance combination, must agree bit-for-bit.
        let model = ToyDiT::new(ModelConfig::tiny(), 41).unwrap();
        let mcfg = model.config();
        let cond = ConditioningBundle {
            text: encode_text("a red square", mcfg.text_dim, mcfg.vocab_seed),
            refs: Vec::new(),
            timestep: 0.0,
        };
        let uncond = ConditioningBundle {
            text: encode_text("", mcfg.text_dim, mcfg.vocab_seed),
            refs: Vec::new(),
            timestep: 0.0,
        };
        let attn = cond.attention_mask(1, 4, 4);
        let shape = (1, 4, 4, mcfg.latent_dim);
        let cfg = SamplerConfig {
            steps: 4,
            guidance_scale: 2.5,
            seed: 13,
        };
        let got = sample_latent(&model, &cond, Some(&uncond), &attn, shape, &cfg).unwrap();

        let mut rng = rng_from(mix(cfg.seed, 0x7361_6d70));
        let mut z = VideoLatent {
            data: Array4::from_shape_fn(shape, |_| rng.sample(StandardNormal)),
        };
        for i in 0..4 {
            let t = 1.0 - i as f64 / 4.0;
            let dt = 0.25;
            let mk = |b: &ConditioningBundle| ConditioningBundle {
                timestep: t,
                ..b.clone()
            };
            let vc = model.velocity(&z, &mk(&cond), &attn).unwrap();
            let vu = model.velocity(&z, &mk(&uncond), &attn).unwrap();
            let v = &vu + &((&vc - &vu) * 2.5);
            z.data = z.data + v * dt;
        }
        assert_eq!(got.data, z.data);
    }

    #[test]
    fn guidance_without_an_unconditional_bundle_is_rejected() {
        let model = PointTargetModel {
            target: VideoLatent {
                data: Array4::zeros((1, 2, 2, 3)),
            },
        };
        let cond = empty_bundle(4);
        let attn = cond.attention_mask(1, 2, 2);
        let cfg = SamplerConfig {
            steps: 2,
            guidance_scale: 3.0,
            seed: 0,
        };
        assert!(matches!(
            sample_latent(&model, &cond, None, &attn, (1, 2, 2, 3), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    // ---------------------------------------------------------------------
    // End-to-end generation
    // ---------------------------------------------------------------------

    fn subject_request(frames: usize) -> GenerationRequest {
        let image = disc_image(16, 16, (8.0, 8.0), 4.0, [0.9, -0.8, -0.8], [0.2, 0.2, 0.2]);
        GenerationRequest {
            prompt: "a red circle moving east on a gray background".into(),
            references: vec![ReferenceInput {
                image,
                mask: None,
                mode: RefMode::Subject,
            }],
            frames,
            height: 8,
            width: 8,
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let model = ToyDiT::new(ModelConfig::tiny(), 47).unwrap();
        let request = subject_request(2);
        let cfg = SamplerConfig {
            steps: 3,
            guidance_scale: 2.0,
            seed: 21,
        };
        let a = generate_video(&model, &request, &cfg).unwrap();
        let b = generate_video(&model, &request, &cfg).unwrap();
        assert_eq!(a.video, b.video);
        let c = generate_video(
            &model,
            &request,
            &SamplerConfig {
                seed: 22,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.video, c.video);
    }

    #[test]
    fn generated_videos_have_the_requested_geometry_and_range() {
        let model = ToyDiT::new(ModelConfig::tiny(), 53).unwrap();
        for frames in [1, 2, 5] {
            let request = subject_request(frames);
            let cfg = SamplerConfig {
                steps: 2,
                guidance_scale: 1.0,
                seed: 3,
            };
            let out = generate_video(&model, &request, &cfg).unwrap();
            assert_eq!(out.video.dim(), (frames, 8, 8, 3));
            assert_eq!(out.latent.data.dim(), (latent_frames(frames), 8, 8, 12));
            assert_eq!(out.references.len(), 1);
            assert!(out.video.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_generation_requests_are_rejected() {
        let model = ToyDiT::new(ModelConfig::tiny(), 59).unwrap();
        let good = subject_request(1);
        let cfg = SamplerConfig {
            steps: 1,
            guidance_scale: 1.0,
            seed: 0,
        };
        let mut no_frames = good.clone();
        no_frames.frames = 0;
        assert!(generate_video(&model, &no_frames, &cfg).is_err());
        let mut odd_size = good.clone();
        odd_size.width = 9;
        // Tiny config uses patch 1, so 9 is fine there; force a patch-2
        // model to exercise the divisibility check.
        let model2 = ToyDiT::new(ModelConfig::default(), 61).unwrap();
        odd_size.height = 16;
        assert!(generate_video(&model2, &odd_size, &cfg).is_err());
        let mut no_steps = cfg;
        no_steps.steps = 0;
        assert!(generate_video(&model, &good, &no_steps).is_err());
    }
}
