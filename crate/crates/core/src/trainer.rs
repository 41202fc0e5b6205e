//! The masked-training loop.
//!
//! Each training example is built from the video being denoised: sample K
//! frames from it, cut an exact-ratio random mask per frame, warp mask and
//! content with a random affine, encode the masked references, and
//! assemble the conditioned input. The optimizer is Adam with decoupled
//! weight decay over the flow-matching objective.
//!
//! All randomness is derived per `(seed, global step, batch slot)`, so a
//! run is bit-reproducible and can be split into chunks: training
//! `steps=a+b` in one call equals training `a` steps followed by `b` steps
//! with `step_offset = a`, provided the optimizer state is carried over.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Array4};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{make_masked_reference, AugmentConfig, MaskedReference};
use crate::codec::{encode_text, resize_mask_to_latent, CodecConfig, MockCodec, VideoLatent};
use crate::conditioning::AttentionMask;
use crate::dataset::DatasetItem;
use crate::error::{Error, Result};
use crate::mask::{generate_mask, BinaryMask, MaskSpec, RatioMixture, ShapeKind};
use crate::model::{ConditioningBundle, ModelConfig, ToyDiT};
use crate::seeds::{mix2, rng_from};

/// Outer retries when a sampled shape cannot reach its exact pixel count
/// (each retry redraws the ratio and the shape).
const MASK_RETRY_LIMIT: u32 = 16;

// =========================================================================
// Configuration
// =========================================================================

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Inclusive range for the per-example reference count K.
    pub ref_count_range: (usize, usize),
    pub ratio_mixture: RatioMixture,
    pub augment: AugmentConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Global step of the first step taken by this call; lets one long run
    /// be split into deterministic chunks.
    pub step_offset: usize,
    pub seed: u64,
    /// Probability of training with an empty prompt (enables
    /// classifier-free guidance at inference).
    pub caption_dropout: f64,
    /// Shape kinds masks may be drawn from (single-kind ablations).
    pub mask_types: Vec<ShapeKind>,
    /// Pin every reference mask to one exact area ratio (ablation).
    pub fixed_ratio: Option<f64>,
    /// Identity affines only (ablation).
    pub disable_augment: bool,
    /// Fully permissive attention admissibility (ablation).
    pub disable_attn_mask: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            ref_count_range: (0, 3),
            ratio_mixture: RatioMixture::training_default(),
            augment: AugmentConfig::default(),
            lr: 1e-4,
            weight_decay: 0.0,
            batch_size: 4,
            steps: 100,
            step_offset: 0,
            seed: 0,
            caption_dropout: 0.1,
            mask_types: ShapeKind::ALL.to_vec(),
            fixed_ratio: None,
            disable_augment: false,
            disable_attn_mask: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let (lo, hi) = self.ref_count_range;
        if lo > hi || hi > 8 {
            return bad(format!("reference count range [{lo}, {hi}] outside [0, 8]"));
        }
        // lr 0 is allowed so frozen-parameter runs can serve as sanity
        // checks; negative or non-finite rates are rejected.
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight decay {} must be finite and >= 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.caption_dropout) {
            return bad(format!("caption dropout {} outside [0, 1]", self.caption_dropout));
        }
        if self.mask_types.is_empty() {
            return bad("mask type set is empty".into());
        }
        if let Some(r) = self.fixed_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("fixed ratio {r} outside [0, 1]"));
            }
        }
        self.augment.validate()?;
        Ok(())
    }
}

// =========================================================================
// Example construction
// =========================================================================

/// Pixel-space provenance of one reference, kept for inspection and the
/// debug validator.
#[derive(Debug, Clone)]
pub struct ReferenceDetail {
    pub frame_index: usize,
    pub kind: ShapeKind,
    pub ratio: f64,
    /// The generated mask before augmentation (exact pixel count).
    pub generated_mask: BinaryMask,
    /// The augmented reference actually encoded.
    pub masked: MaskedReference,
}

/// One fully assembled training example.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub z0: VideoLatent,
    pub cond: ConditioningBundle,
    pub attn: AttentionMask,
    pub references: Vec<ReferenceDetail>,
}

/// Build one example from a (video, caption) pair. The RNG draw order is
/// fixed: K, caption dropout, then per reference (frame, ratio/kind/seed
/// retries, augmentation).
pub fn build_training_example(
    codec: &MockCodec,
    model_cfg: &ModelConfig,
    video: &Array4<f64>,
    caption: &str,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingExample> {
    let (frames, height, width, _) = video.dim();
    let (lo, hi) = cfg.ref_count_range;
    let k = rng.random_range(lo..=hi);
    let dropped = cfg.caption_dropout > 0.0 && rng.random_bool(cfg.caption_dropout);
    let text = encode_text(
        if dropped { "" } else { caption },
        model_cfg.text_dim,
        model_cfg.vocab_seed,
    );

    let z0 = codec.encode_video(video)?;
    let (f_hat, h, w, _) = z0.data.dim();

    let mut refs = Vec::with_capacity(k);
    let mut references = Vec::with_capacity(k);
    for _ in 0..k {
        let frame_index = rng.random_range(0..frames);
        let frame: Array3<f64> = video
            .index_axis(ndarray::Axis(0), frame_index)
            .to_owned();

        // Retry with a fresh ratio and shape when a sample cannot reach its
        // exact count.
        let mut found = None;
        for _ in 0..MASK_RETRY_LIMIT {
            let ratio = cfg
                .fixed_ratio
                .unwrap_or_else(|| cfg.ratio_mixture.sample(rng));
            let kind = *cfg.mask_types.choose(rng).expect("validated non-empty");
            let spec = MaskSpec::new(kind, height, width, ratio, rng.random())?;
            match generate_mask(&spec) {
                Ok(mask) => {
                    found = Some((mask, kind, ratio, spec.target_count()));
                    break;
                }
                Err(Error::GenerationFailure { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
        let Some((mask, kind, ratio, target)) = found else {
            return Err(Error::GenerationFailure {
                attempts: MASK_RETRY_LIMIT,
            });
        };

        let aug = if cfg.disable_augment {
            AugmentConfig::disabled()
        } else {
            cfg.augment
        };
        let masked = make_masked_reference(&frame, &mask, &aug, rng)?;
        if cfg!(debug_assertions) {
            debug_validate_reference(&mask, target, &masked);
        }

        let z_ref = codec.encode_reference(&masked.masked_frame)?;
        let m_lat = resize_mask_to_latent(&masked.mask, h, w)?;
        refs.push((z_ref, m_lat));
        references.push(ReferenceDetail {
            frame_index,
            kind,
            ratio,
            generated_mask: mask,
            masked,
        });
    }

    let cond = ConditioningBundle {
        text,
        refs,
        // Placeholder; the loss evaluation samples and injects the real t.
        timestep: 0.0,
    };
    let attn = if cfg.disable_attn_mask {
        AttentionMask::permissive(f_hat, h, w, k)
    } else {
        cond.attention_mask(f_hat, h, w)
    };
    Ok(TrainingExample {
        z0,
        cond,
        attn,
        references,
    })
}

/// Debug-build re-assertion of the delegated invariants: exact pre-augment
/// counts, binary masks, zero content off-mask, and — only when a real
/// affine was applied — an empty border ring. Identity transforms (the
/// augmentation ablation, empty masks) keep the raw mask, which may touch
/// the border legitimately.
fn debug_validate_reference(generated: &BinaryMask, target: usize, masked: &MaskedReference) {
    assert_eq!(
        generated.foreground_count(),
        target,
        "generated mask missed its exact count"
    );
    let ring_required = !masked.params.is_identity();
    let (h, w) = (masked.mask.height(), masked.mask.width());
    for r in 0..h {
        for c in 0..w {
            let fg = masked.mask.get(r, c);
            if fg && ring_required && (r == 0 || c == 0 || r == h - 1 || c == w - 1) {
                panic!("augmented foreground touches the frame border at ({r}, {c})");
            }
            for ch in 0..3 {
                let v = masked.masked_frame[[r, c, ch]];
                assert!(v.is_finite(), "non-finite reference value at ({r}, {c})");
                if !fg {
                    assert_eq!(v, 0.0, "off-mask content at ({r}, {c})");
                }
            }
        }
    }
}

// =========================================================================
// Optimizer
// =========================================================================

/// Adam with decoupled weight decay. Moment tensors are created lazily on
/// the first step; keep the instance alive across chunked training calls.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new() -> AdamW {
        AdamW::default()
    }

    /// One update with bias-correction step count `t` (1-based).
    pub fn step(
        &mut self,
        model: &mut ToyDiT,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
        weight_decay: f64,
        t: usize,
    ) {
        let bc1 = 1.0 - Self::BETA1.powi(t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(t as i32);
        for (name, param) in model.params_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + Self::EPS) + weight_decay * *p);
                });
        }
    }
}

// =========================================================================
// The loop
// =========================================================================

/// Run `cfg.steps` optimization steps, mutating the model and optimizer in
/// place. Returns the loss trace as (global step, batch loss) pairs.
pub fn train(
    model: &mut ToyDiT,
    opt: &mut AdamW,
    cfg: &TrainConfig,
    dataset: &[DatasetItem],
) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    let codec_cfg = CodecConfig::new(model.config().codec_patch, model.config().codec_seed)?;
    let codec = MockCodec::new(codec_cfg);

    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let gstep = cfg.step_offset + step;
        let batch_seed = mix2(cfg.seed, 0x6261_7463, gstep as u64);

        let mut batch_loss = 0.0;
        let mut acc: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for slot in 0..cfg.batch_size {
            let mut rng = rng_from(mix2(batch_seed, 0x6578_616d, slot as u64));
            let idx = rng.random_range(0..dataset.len());
            let item = &dataset[idx];
            let example = build_training_example(
                &codec,
                model.config(),
                &item.video,
                &item.caption,
                cfg,
                &mut rng,
            )?;
            let report = model.fm_loss_sampled(&example.z0, &example.cond, &example.attn, &mut rng)?;
            batch_loss += report.loss;
            for (name, g) in report.grads.expect("gradients requested") {
                match acc.get_mut(&name) {
                    Some(sum) => *sum += &g,
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        batch_loss /= cfg.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: batch_loss,
                step: gstep,
                seed: batch_seed,
            });
        }
        let scale = 1.0 / cfg.batch_size as f64;
        for g in acc.values_mut() {
            g.mapv_inplace(|v| v * scale);
        }
        opt.step(model, &acc, cfg.lr, cfg.weight_decay, gstep + 1);
        trace.push((gstep, batch_loss));
    }
    Ok(trace)
}

/// Write a loss trace as tab-separated `step<TAB>loss` lines.
pub fn write_loss_trace(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step\tloss")?;
    for (step, loss) in trace {
        writeln!(out, "{step}\t{loss}")?;
    }
    Ok(())
}
