//! Latent input assembly and reference-aware attention masking.
//!
//! The transformer consumes one tensor of shape `(F̂+K) x h x w x (2d+4)`:
//! the noised video latent occupies the first `F̂` temporal slots, reference
//! latents the last `K`. Each slot carries three channel groups —
//! `[noised-or-ref latent (d) | mask (4) | zero-or-ref latent (d)]` — so the
//! model can tell noised content, reference content and padding apart.
//! Reference slots are never noised.
//!
//! The attention mask makes video tokens bi-directional while admitting
//! reference tokens as keys only where their latent mask marks valid
//! content.

use ndarray::{Array2, Array3, Array4};

use crate::codec::{LatentMask, VideoLatent, TEMPORAL_GROUP};
use crate::error::{Error, Result};

/// Channels added to the two latent groups by the mask group.
pub const MASK_CHANNELS: usize = TEMPORAL_GROUP;

// =========================================================================
// Noising
// =========================================================================

/// The linear interpolation path `z_t = (1−t)·z0 + t·eps`.
pub fn noise_latent(z0: &VideoLatent, t: f64, eps: &Array4<f64>) -> Result<VideoLatent> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::ContractViolation(format!("timestep {t} outside [0, 1]")));
    }
    if z0.data.dim() != eps.dim() {
        return Err(Error::ContractViolation(format!(
            "z0 {:?} vs eps {:?}",
            z0.data.dim(),
            eps.dim()
        )));
    }
    let mut data = z0.data.clone();
    data.zip_mut_with(eps, |z, &e| *z = (1.0 - t) * *z + t * e);
    Ok(VideoLatent { data })
}

// =========================================================================
// Input assembly
// =========================================================================

/// The fully assembled transformer input.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledInput {
    /// `(F̂+K) x h x w x (2d+4)`.
    pub data: Array4<f64>,
    pub video_frames: usize,
    pub ref_frames: usize,
    pub latent_channels: usize,
}

impl AssembledInput {
    /// Concatenate per the fixed layout. `z_zero` must be the encoding of
    /// the all-zero video (a codec constant the caller computes once); the
    /// all-zero mask group of the video slots is implicit.
    pub fn assemble(
        z_t: &VideoLatent,
        z_refs: &[Array3<f64>],
        m_refs: &[LatentMask],
        z_zero: &VideoLatent,
    ) -> Result<AssembledInput> {
        let (f_hat, h, w, d) = z_t.data.dim();
        if z_zero.data.dim() != (f_hat, h, w, d) {
            return Err(Error::ContractViolation(format!(
                "z_zero {:?} vs z_t {:?}",
                z_zero.data.dim(),
                z_t.data.dim()
            )));
        }
        if z_refs.len() != m_refs.len() {
            return Err(Error::ContractViolation(format!(
                "{} reference latents vs {} masks",
                z_refs.len(),
                m_refs.len()
            )));
        }
        for (k, (z_ref, m_ref)) in z_refs.iter().zip(m_refs).enumerate() {
            if z_ref.dim() != (h, w, d) {
                return Err(Error::ContractViolation(format!(
                    "reference {k} latent {:?}, expected {:?}",
                    z_ref.dim(),
                    (h, w, d)
                )));
            }
            if m_ref.height() != h || m_ref.width() != w {
                return Err(Error::ContractViolation(format!(
                    "reference {k} mask {}x{}, expected {h}x{w}",
                    m_ref.height(),
                    m_ref.width()
                )));
            }
        }

        let k_refs = z_refs.len();
        let channels = 2 * d + MASK_CHANNELS;
        let mut data = Array4::<f64>::zeros((f_hat + k_refs, h, w, channels));
        for i in 0..h {
            for j in 0..w {
                for fo in 0..f_hat {
                    for c in 0..d {
                        data[[fo, i, j, c]] = z_t.data[[fo, i, j, c]];
                        // Mask group stays zero (m_zero).
                        data[[fo, i, j, d + MASK_CHANNELS + c]] = z_zero.data[[fo, i, j, c]];
                    }
                }
                for (k, (z_ref, m_ref)) in z_refs.iter().zip(m_refs).enumerate() {
                    let slot = f_hat + k;
                    let m = f64::from(m_ref.valid(i, j));
                    for c in 0..d {
                        data[[slot, i, j, c]] = z_ref[[i, j, c]];
                        data[[slot, i, j, d + MASK_CHANNELS + c]] = z_ref[[i, j, c]];
                    }
                    for c in 0..MASK_CHANNELS {
                        data[[slot, i, j, d + c]] = m;
                    }
                }
            }
        }
        Ok(AssembledInput {
            data,
            video_frames: f_hat,
            ref_frames: k_refs,
            latent_channels: d,
        })
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    pub fn tokens(&self) -> usize {
        (self.video_frames + self.ref_frames) * self.height() * self.width()
    }

    pub fn video_tokens(&self) -> usize {
        self.video_frames * self.height() * self.width()
    }

    /// The noised video latent (channel group 1 of the video slots).
    pub fn extract_video(&self) -> Array4<f64> {
        let (_, h, w, _) = self.data.dim();
        Array4::from_shape_fn((self.video_frames, h, w, self.latent_channels), |(f, i, j, c)| {
            self.data[[f, i, j, c]]
        })
    }

    /// Reference latents (channel group 1 of the reference slots).
    pub fn extract_refs(&self) -> Vec<Array3<f64>> {
        let (_, h, w, _) = self.data.dim();
        (0..self.ref_frames)
            .map(|k| {
                Array3::from_shape_fn((h, w, self.latent_channels), |(i, j, c)| {
                    self.data[[self.video_frames + k, i, j, c]]
                })
            })
            .collect()
    }

    /// Reference mask channels (`h x w x 4` each).
    pub fn extract_ref_masks(&self) -> Vec<Array3<f64>> {
        let (_, h, w, _) = self.data.dim();
        let d = self.latent_channels;
        (0..self.ref_frames)
            .map(|k| {
                Array3::from_shape_fn((h, w, MASK_CHANNELS), |(i, j, c)| {
                    self.data[[self.video_frames + k, i, j, d + c]]
                })
            })
            .collect()
    }

    /// The mask group of the video slots (all zeros by construction).
    pub fn extract_video_masks(&self) -> Array4<f64> {
        let (_, h, w, _) = self.data.dim();
        let d = self.latent_channels;
        Array4::from_shape_fn((self.video_frames, h, w, MASK_CHANNELS), |(f, i, j, c)| {
            self.data[[f, i, j, d + c]]
        })
    }

    /// The zero-video encoding carried by the video slots (group 3).
    pub fn extract_zero_latent(&self) -> Array4<f64> {
        let (_, h, w, _) = self.data.dim();
        let d = self.latent_channels;
        Array4::from_shape_fn((self.video_frames, h, w, d), |(f, i, j, c)| {
            self.data[[f, i, j, d + MASK_CHANNELS + c]]
        })
    }

    /// Flatten to a token matrix `[(F̂+K)·h·w, 2d+4]`, tokens ordered by
    /// (temporal slot, row, col).
    pub fn to_token_matrix(&self) -> Array2<f64> {
        let (slots, h, w, ch) = self.data.dim();
        let mut out = Array2::<f64>::zeros((slots * h * w, ch));
        for f in 0..slots {
            for i in 0..h {
                for j in 0..w {
                    let t = (f * h + i) * w + j;
                    for c in 0..ch {
                        out[[t, c]] = self.data[[f, i, j, c]];
                    }
                }
            }
        }
        out
    }
}

// =========================================================================
// Attention mask
// =========================================================================

/// Per-rule admissible-pair counts, for inspection output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RuleCounts {
    pub video_to_video: usize,
    pub video_to_ref: usize,
    pub ref_to_video: usize,
    pub ref_to_ref: usize,
    pub invalid_self: usize,
}

impl RuleCounts {
    pub fn total(&self) -> usize {
        self.video_to_video
            + self.video_to_ref
            + self.ref_to_video
            + self.ref_to_ref
            + self.invalid_self
    }
}

/// Token-level admissibility for masked self-attention.
///
/// Rules: (a) video→video always; (b) video→ref iff the key is valid;
/// (c) valid-ref→video always; (d) valid-ref→ref iff the key is valid,
/// across all references; (e) invalid-ref→itself only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    video_tokens: usize,
    /// Validity per reference token (length `K·h·w`).
    valid: Vec<bool>,
}

impl AttentionMask {
    /// Build from the latent masks, tokens ordered like
    /// [`AssembledInput::to_token_matrix`].
    pub fn build(f_hat: usize, h: usize, w: usize, m_refs: &[LatentMask]) -> AttentionMask {
        let mut valid = Vec::with_capacity(m_refs.len() * h * w);
        for m in m_refs {
            for i in 0..h {
                for j in 0..w {
                    valid.push(m.valid(i, j));
                }
            }
        }
        AttentionMask {
            video_tokens: f_hat * h * w,
            valid,
        }
    }

    /// The ablation variant: every reference token is treated as valid, so
    /// nothing is excluded.
    pub fn permissive(f_hat: usize, h: usize, w: usize, k_refs: usize) -> AttentionMask {
        AttentionMask {
            video_tokens: f_hat * h * w,
            valid: vec![true; k_refs * h * w],
        }
    }

    pub fn video_tokens(&self) -> usize {
        self.video_tokens
    }

    pub fn ref_tokens(&self) -> usize {
        self.valid.len()
    }

    pub fn len(&self) -> usize {
        self.video_tokens + self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validity of a reference token by global token index.
    pub fn ref_valid(&self, token: usize) -> bool {
        token >= self.video_tokens && self.valid[token - self.video_tokens]
    }

    /// Whether query token `q` may attend to key token `k`.
    pub fn admissible(&self, q: usize, k: usize) -> bool {
        let q_video = q < self.video_tokens;
        let k_video = k < self.video_tokens;
        if q_video {
            k_video || self.valid[k - self.video_tokens]
        } else if self.valid[q - self.video_tokens] {
            k_video || self.valid[k - self.video_tokens]
        } else {
            q == k
        }
    }

    /// Dense boolean matrix of the admissibility relation.
    pub fn to_matrix(&self) -> Array2<bool> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(q, k)| self.admissible(q, k))
    }

    /// Count admissible pairs per rule.
    pub fn rule_counts(&self) -> RuleCounts {
        let mut counts = RuleCounts::default();
        let n = self.len();
        for q in 0..n {
            for k in 0..n {
                if !self.admissible(q, k) {
                    continue;
                }
                let q_video = q < self.video_tokens;
                let k_video = k < self.video_tokens;
                match (q_video, k_video) {
                    (true, true) => counts.video_to_video += 1,
                    (true, false) => counts.video_to_ref += 1,
                    (false, true) => counts.ref_to_video += 1,
                    (false, false) => {
                        if self.valid[q - self.video_tokens] {
                            counts.ref_to_ref += 1;
                        } else {
                            counts.invalid_self += 1;
                        }
                    }
                }
            }
        }
        counts
    }
}

// =========================================================================
// Masked attention
// =========================================================================

/// Reference implementation of masked single-head attention: scaled dot
/// product with inadmissible logits at −∞, i.e. softmax over the admissible
/// keys only. Matrix layout: one row per token.
pub fn masked_attention(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    values: &Array2<f64>,
    mask: &AttentionMask,
) -> Result<Array2<f64>> {
    let (n, dk) = queries.dim();
    if keys.dim() != (n, dk) {
        return Err(Error::ContractViolation(format!(
            "keys {:?} vs queries {:?}",
            keys.dim(),
            queries.dim()
        )));
    }
    if values.dim().0 != n {
        return Err(Error::ContractViolation(format!(
            "values have {} rows, expected {n}",
            values.dim().0
        )));
    }
    if mask.len() != n {
        return Err(Error::ContractViolation(format!(
            "mask covers {} tokens, inputs have {n}",
            mask.len()
        )));
    }

    let dv = values.dim().1;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Array2::<f64>::zeros((n, dv));
    let mut logits = vec![f64::NEG_INFINITY; n];
    for q in 0..n {
        let mut any = false;
        let mut max_logit = f64::NEG_INFINITY;
        for k in 0..n {
            if mask.admissible(q, k) {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += queries[[q, c]] * keys[[k, c]];
                }
                let logit = dot * scale;
                logits[k] = logit;
                max_logit = max_logit.max(logit);
                any = true;
            } else {
                logits[k] = f64::NEG_INFINITY;
            }
        }
        if !any {
            return Err(Error::ContractViolation(format!(
                "query {q} has no admissible keys"
            )));
        }
        let mut denom = 0.0;
        for k in 0..n {
            if logits[k] > f64::NEG_INFINITY {
                let e = (logits[k] - max_logit).exp();
                logits[k] = e;
                denom += e;
            } else {
                logits[k] = 0.0;
            }
        }
        for k in 0..n {
            if logits[k] > 0.0 {
                let weight = logits[k] / denom;
                for c in 0..dv {
                    out[[q, c]] += weight * values[[k, c]];
                }
            }
        }
    }
    Ok(out)
}
