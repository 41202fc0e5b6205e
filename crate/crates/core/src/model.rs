//! A small velocity-prediction diffusion transformer.
//!
//! The network consumes the assembled latent tensor as one token sequence —
//! `(F̂+K)·h·w` tokens of `2d+4` channels — and predicts, for the `F̂·h·w`
//! video tokens only, the `d`-channel velocity of the linear noising path.
//! Each block applies masked self-attention (reference validity enforced via
//! the admissibility mask), dense cross-attention onto the text features,
//! and an FFN whose input is modulated by a per-block scale/shift derived
//! from the timestep embedding. Invalid reference tokens are additionally
//! zeroed at every block input so their content cannot re-enter through
//! per-token paths.
//!
//! Everything runs through the reverse-mode tape, so the same forward
//! definition serves prediction and training.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};
use crate::codec::{LatentMask, TextFeatures, VideoLatent};
use crate::conditioning::{noise_latent, AssembledInput, AttentionMask, MASK_CHANNELS};
use crate::error::{Error, Result};
use crate::seeds::{mix, rng_from};

// =========================================================================
// Configuration
// =========================================================================

/// Architecture hyperparameters plus the codec identity the weights were
/// trained against (stored in checkpoints so incompatible pairings are
/// detected at load time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub text_dim: usize,
    /// Latent channels `d`; input tokens carry `2d+4` channels.
    pub latent_dim: usize,
    pub ffn_mult: usize,
    /// Width of the sinusoidal timestep feature vector.
    pub time_dim: usize,
    pub codec_patch: usize,
    pub codec_seed: u64,
    pub vocab_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        let codec = crate::codec::CodecConfig::default();
        ModelConfig {
            blocks: 4,
            model_dim: 128,
            heads: 4,
            text_dim: 64,
            latent_dim: codec.latent_dim(),
            ffn_mult: 4,
            time_dim: 128,
            codec_patch: codec.spatial_patch,
            codec_seed: codec.projection_seed,
            vocab_seed: crate::codec::DEFAULT_VOCAB_SEED,
        }
    }
}

impl ModelConfig {
    /// A miniature configuration for gradient checking and fast tests.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            blocks: 2,
            model_dim: 16,
            heads: 2,
            text_dim: 8,
            latent_dim: 12,
            ffn_mult: 2,
            time_dim: 8,
            codec_patch: 1,
            ..ModelConfig::default()
        }
    }

    pub fn in_channels(&self) -> usize {
        2 * self.latent_dim + MASK_CHANNELS
    }

    pub fn out_channels(&self) -> usize {
        self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::ContractViolation(format!("model config: {msg}")))
            }
        };
        check(self.blocks >= 1, "needs at least one block")?;
        check(self.model_dim >= 6, "model_dim must be at least 6")?;
        check(self.model_dim % 2 == 0, "model_dim must be even")?;
        check(
            self.model_dim % self.heads == 0,
            "model_dim must be divisible by heads",
        )?;
        check(self.heads >= 1, "needs at least one head")?;
        check(self.text_dim >= 1, "text_dim must be positive")?;
        check(self.ffn_mult >= 1, "ffn_mult must be positive")?;
        check(
            self.time_dim >= 2 && self.time_dim % 2 == 0,
            "time_dim must be even and at least 2",
        )?;
        check(
            self.latent_dim == 12 * self.codec_patch * self.codec_patch,
            "latent_dim must equal 12·patch²",
        )?;
        Ok(())
    }
}

// =========================================================================
// Conditioning bundle
// =========================================================================

/// Everything besides the noised latent that conditions a prediction: text
/// features, reference latents with their validity masks, and the timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub text: TextFeatures,
    pub refs: Vec<(Array3<f64>, LatentMask)>,
    pub timestep: f64,
}

impl ConditioningBundle {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.timestep) {
            return Err(Error::ContractViolation(format!(
                "timestep {} outside [0, 1]",
                self.timestep
            )));
        }
        for (k, (latent, mask)) in self.refs.iter().enumerate() {
            let (h, w, _) = latent.dim();
            if mask.height() != h || mask.width() != w {
                return Err(Error::ContractViolation(format!(
                    "reference {k}: latent {h}x{w} vs mask {}x{}",
                    mask.height(),
                    mask.width()
                )));
            }
        }
        Ok(())
    }

    /// Admissibility mask implied by the reference validity masks.
    pub fn attention_mask(&self, f_hat: usize, h: usize, w: usize) -> AttentionMask {
        let masks: Vec<LatentMask> = self.refs.iter().map(|(_, m)| m.clone()).collect();
        AttentionMask::build(f_hat, h, w, &masks)
    }
}

/// Assemble the model input from a noised latent and a conditioning bundle.
/// The clean-video channel group uses the zero latent directly: the latent
/// codec is linear, so the all-zero video encodes to the all-zero latent
/// (asserted by the codec tests).
pub fn assemble_for_model(
    z_t: &VideoLatent,
    cond: &ConditioningBundle,
) -> Result<AssembledInput> {
    let z_zero = VideoLatent::zeros_like(z_t);
    let latents: Vec<Array3<f64>> = cond.refs.iter().map(|(z, _)| z.clone()).collect();
    let masks: Vec<LatentMask> = cond.refs.iter().map(|(_, m)| m.clone()).collect();
    AssembledInput::assemble(z_t, &latents, &masks, &z_zero)
}

// =========================================================================
// Positional and timestep features
// =========================================================================

/// Fill `out` with interleaved sin/cos features of `pos` (standard
/// geometric frequency ladder).
fn sinusoid_into(out: &mut [f64], pos: f64) {
    let dim = out.len();
    debug_assert!(dim % 2 == 0);
    for j in 0..dim / 2 {
        let freq = (-((2 * j) as f64) / dim as f64 * 10000f64.ln()).exp();
        out[2 * j] = (pos * freq).sin();
        out[2 * j + 1] = (pos * freq).cos();
    }
}

/// Per-axis widths of the 3-D positional encoding: row and column get
/// `2·⌊D/6⌋` channels each, the frame axis the (even) remainder.
fn axis_dims(model_dim: usize) -> (usize, usize, usize) {
    let row = 2 * (model_dim / 6);
    let col = row;
    (model_dim - row - col, row, col)
}

/// 3-D sinusoidal positional encoding over the token sequence. Video slot
/// `f` uses frame position `f`; every reference slot shares the single
/// distinguished frame position `F̂`, so reference order carries no
/// positional meaning.
pub fn positional_encoding(
    f_hat: usize,
    k_refs: usize,
    h: usize,
    w: usize,
    model_dim: usize,
) -> Array2<f64> {
    let (fd, rd, cd) = axis_dims(model_dim);
    let n = (f_hat + k_refs) * h * w;
    let mut pe = Array2::<f64>::zeros((n, model_dim));
    let mut frame_feat = vec![0.0; fd];
    let mut row_feat = vec![0.0; rd];
    let mut col_feat = vec![0.0; cd];
    for slot in 0..f_hat + k_refs {
        let frame_pos = slot.min(f_hat) as f64;
        sinusoid_into(&mut frame_feat, frame_pos);
        for i in 0..h {
            sinusoid_into(&mut row_feat, i as f64);
            for j in 0..w {
                sinusoid_into(&mut col_feat, j as f64);
                let t = (slot * h + i) * w + j;
                for (c, &v) in frame_feat.iter().enumerate() {
                    pe[[t, c]] = v;
                }
                for (c, &v) in row_feat.iter().enumerate() {
                    pe[[t, fd + c]] = v;
                }
                for (c, &v) in col_feat.iter().enumerate() {
                    pe[[t, fd + rd + c]] = v;
                }
            }
        }
    }
    pe
}

/// Sinusoidal features of the (scaled) timestep, as a single row.
pub fn time_features(t: f64, time_dim: usize) -> Array2<f64> {
    let mut row = vec![0.0; time_dim];
    sinusoid_into(&mut row, t * 1000.0);
    Array2::from_shape_vec((1, time_dim), row).expect("shape is consistent")
}

// =========================================================================
// The model
// =========================================================================

/// The transformer: a named map of weight matrices plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiT {
    config: ModelConfig,
    params: BTreeMap<String, Array2<f64>>,
}

/// Loss (and, when requested, parameter gradients) of one flow-matching
/// evaluation.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub t: f64,
    pub grads: Option<BTreeMap<String, Array2<f64>>>,
}

impl ToyDiT {
    /// Fresh model with seeded gaussian init (std `1/√fan_in`). The output
    /// head and the modulation projections start at zero, so the initial
    /// prediction is exactly zero and the initial FFN modulation is the
    /// identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<ToyDiT> {
        config.validate()?;
        type Params = BTreeMap<String, Array2<f64>>;
        fn weight(
            params: &mut Params,
            rng: &mut impl Rng,
            name: String,
            rows: usize,
            cols: usize,
        ) {
            let std = 1.0 / (rows as f64).sqrt();
            let value =
                Array2::from_shape_fn((rows, cols), |_| std * rng.sample::<f64, _>(StandardNormal));
            params.insert(name, value);
        }
        fn zeros(params: &mut Params, name: String, rows: usize, cols: usize) {
            params.insert(name, Array2::zeros((rows, cols)));
        }
        fn ones(params: &mut Params, name: String, cols: usize) {
            params.insert(name, Array2::ones((1, cols)));
        }

        let mut rng = rng_from(mix(seed, 0x6d6f_6465));
        let mut p = Params::new();
        let dm = config.model_dim;
        let df = config.ffn_mult * dm;

        weight(&mut p, &mut rng, "embed.w".into(), config.in_channels(), dm);
        zeros(&mut p, "embed.b".into(), 1, dm);
        weight(&mut p, &mut rng, "time.fc1.w".into(), config.time_dim, dm);
        zeros(&mut p, "time.fc1.b".into(), 1, dm);
        weight(&mut p, &mut rng, "time.fc2.w".into(), dm, dm);
        zeros(&mut p, "time.fc2.b".into(), 1, dm);
        for b in 0..config.blocks {
            ones(&mut p, format!("block{b}.ln1.g"), dm);
            zeros(&mut p, format!("block{b}.ln1.b"), 1, dm);
            for part in ["wq", "wk", "wv", "wo"] {
                weight(&mut p, &mut rng, format!("block{b}.attn.{part}"), dm, dm);
            }
            for part in ["bq", "bk", "bv", "bo"] {
                zeros(&mut p, format!("block{b}.attn.{part}"), 1, dm);
            }
            ones(&mut p, format!("block{b}.ln2.g"), dm);
            zeros(&mut p, format!("block{b}.ln2.b"), 1, dm);
            weight(&mut p, &mut rng, format!("block{b}.cross.wq"), dm, dm);
            weight(&mut p, &mut rng, format!("block{b}.cross.wk"), config.text_dim, dm);
            weight(&mut p, &mut rng, format!("block{b}.cross.wv"), config.text_dim, dm);
            weight(&mut p, &mut rng, format!("block{b}.cross.wo"), dm, dm);
            for part in ["bq", "bk", "bv", "bo"] {
                zeros(&mut p, format!("block{b}.cross.{part}"), 1, dm);
            }
            ones(&mut p, format!("block{b}.ln3.g"), dm);
            zeros(&mut p, format!("block{b}.ln3.b"), 1, dm);
            zeros(&mut p, format!("block{b}.mod.w"), dm, 2 * dm);
            zeros(&mut p, format!("block{b}.mod.b"), 1, 2 * dm);
            weight(&mut p, &mut rng, format!("block{b}.ffn.fc1.w"), dm, df);
            zeros(&mut p, format!("block{b}.ffn.fc1.b"), 1, df);
            weight(&mut p, &mut rng, format!("block{b}.ffn.fc2.w"), df, dm);
            zeros(&mut p, format!("block{b}.ffn.fc2.b"), 1, dm);
        }
        ones(&mut p, "final.ln.g".into(), dm);
        zeros(&mut p, "final.ln.b".into(), 1, dm);
        zeros(&mut p, "head.w".into(), dm, config.latent_dim);
        zeros(&mut p, "head.b".into(), 1, config.latent_dim);

        Ok(ToyDiT { config, params: p })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn param(&self, name: &str) -> Result<&Array2<f64>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::ContractViolation(format!("unknown parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::ContractViolation(format!("unknown parameter {name}")))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.params.iter_mut()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }

    // ---------------------------------------------------------------------
    // Forward
    // ---------------------------------------------------------------------

    fn build_forward(
        &self,
        z_in: &AssembledInput,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
        trainable: bool,
    ) -> Result<(Graph, NodeId, Vec<(String, NodeId)>)> {
        cond.validate()?;
        let cfg = &self.config;
        if z_in.latent_channels != cfg.latent_dim {
            return Err(Error::ContractViolation(format!(
                "input latent channels {} vs model latent_dim {}",
                z_in.latent_channels, cfg.latent_dim
            )));
        }
        if cond.text.dim() != cfg.text_dim {
            return Err(Error::ContractViolation(format!(
                "text feature dim {} vs model text_dim {}",
                cond.text.dim(),
                cfg.text_dim
            )));
        }
        if mask.len() != z_in.tokens() || mask.video_tokens() != z_in.video_tokens() {
            return Err(Error::ContractViolation(format!(
                "attention mask covers {} tokens ({} video), input has {} ({} video)",
                mask.len(),
                mask.video_tokens(),
                z_in.tokens(),
                z_in.video_tokens()
            )));
        }

        let dm = cfg.model_dim;
        let dh = dm / cfg.heads;
        let n = z_in.tokens();
        let n_video = z_in.video_tokens();
        let (h, w) = (z_in.height(), z_in.width());

        let mut g = Graph::new();
        let mut ids: BTreeMap<String, NodeId> = BTreeMap::new();
        for (name, value) in &self.params {
            ids.insert(name.clone(), g.leaf(value.clone(), trainable));
        }
        let p = |name: String| ids[&name];

        // Token validity gate: video and valid-reference rows pass, invalid
        // reference rows are zeroed at every block input.
        let gate = Rc::new(Array1::from_shape_fn(n, |i| {
            if i < n_video || mask.ref_valid(i) {
                1.0
            } else {
                0.0
            }
        }));
        let adm = Rc::new(mask.to_matrix());

        // Embedding + positional encoding.
        let tokens = g.leaf(z_in.to_token_matrix(), false);
        let t0 = g.matmul(tokens, p("embed.w".into()));
        let mut x = g.add_row(t0, p("embed.b".into()));
        let pe = g.leaf(
            positional_encoding(z_in.video_frames, z_in.ref_frames, h, w, dm),
            false,
        );
        x = g.add(x, pe);

        // Shared timestep embedding.
        let tf = g.leaf(time_features(cond.timestep, cfg.time_dim), false);
        let t1 = g.matmul(tf, p("time.fc1.w".into()));
        let t1 = g.add_row(t1, p("time.fc1.b".into()));
        let t1 = g.silu(t1);
        let t2 = g.matmul(t1, p("time.fc2.w".into()));
        let temb = g.add_row(t2, p("time.fc2.b".into()));

        let text = g.leaf(cond.text.data.clone(), false);

        let lin = |g: &mut Graph, x: NodeId, w: NodeId, b: NodeId| {
            let y = g.matmul(x, w);
            g.add_row(y, b)
        };
        let ln_affine = |g: &mut Graph, x: NodeId, gain: NodeId, bias: NodeId| {
            let y = g.layer_norm(x);
            let y = g.mul_row(y, gain);
            g.add_row(y, bias)
        };

        for b in 0..cfg.blocks {
            let pre = format!("block{b}");
            x = g.row_gate(x, Rc::clone(&gate));

            // Masked self-attention.
            let h1 = ln_affine(&mut g, x, p(format!("{pre}.ln1.g")), p(format!("{pre}.ln1.b")));
            let q = lin(&mut g, h1, p(format!("{pre}.attn.wq")), p(format!("{pre}.attn.bq")));
            let k = lin(&mut g, h1, p(format!("{pre}.attn.wk")), p(format!("{pre}.attn.bk")));
            let v = lin(&mut g, h1, p(format!("{pre}.attn.wv")), p(format!("{pre}.attn.bv")));
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.slice_cols(q, hd * dh, dh);
                let kh = g.slice_cols(k, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt);
                let s = g.scale(s, 1.0 / (dh as f64).sqrt());
                let probs = g.softmax_rows(s, Some(Rc::clone(&adm)));
                heads.push(g.matmul(probs, vh));
            }
            let cat = g.concat_cols(&heads);
            let proj = lin(&mut g, cat, p(format!("{pre}.attn.wo")), p(format!("{pre}.attn.bo")));
            x = g.add(x, proj);

            // Dense text cross-attention (single head).
            let h2 = ln_affine(&mut g, x, p(format!("{pre}.ln2.g")), p(format!("{pre}.ln2.b")));
            let q2 = lin(&mut g, h2, p(format!("{pre}.cross.wq")), p(format!("{pre}.cross.bq")));
            let tk = lin(&mut g, text, p(format!("{pre}.cross.wk")), p(format!("{pre}.cross.bk")));
            let tv = lin(&mut g, text, p(format!("{pre}.cross.wv")), p(format!("{pre}.cross.bv")));
            let tkt = g.transpose(tk);
            let s2 = g.matmul(q2, tkt);
            let s2 = g.scale(s2, 1.0 / (dm as f64).sqrt());
            let p2 = g.softmax_rows(s2, None);
            let ctx = g.matmul(p2, tv);
            let projc = lin(&mut g, ctx, p(format!("{pre}.cross.wo")), p(format!("{pre}.cross.bo")));
            x = g.add(x, projc);

            // FFN with timestep scale/shift modulation.
            let h3 = ln_affine(&mut g, x, p(format!("{pre}.ln3.g")), p(format!("{pre}.ln3.b")));
            let modv = lin(&mut g, temb, p(format!("{pre}.mod.w")), p(format!("{pre}.mod.b")));
            let sc = g.slice_cols(modv, 0, dm);
            let sh = g.slice_cols(modv, dm, dm);
            let sc1 = g.add_const(sc, 1.0);
            let m1 = g.mul_row(h3, sc1);
            let m2 = g.add_row(m1, sh);
            let f1 = lin(&mut g, m2, p(format!("{pre}.ffn.fc1.w")), p(format!("{pre}.ffn.fc1.b")));
            let f1 = g.silu(f1);
            let f2 = lin(&mut g, f1, p(format!("{pre}.ffn.fc2.w")), p(format!("{pre}.ffn.fc2.b")));
            x = g.add(x, f2);
        }

        let xf = ln_affine(&mut g, x, p("final.ln.g".into()), p("final.ln.b".into()));
        let vid = g.slice_rows(xf, 0, n_video);
        let out = lin(&mut g, vid, p("head.w".into()), p("head.b".into()));

        let param_ids = ids.into_iter().map(|(k, v)| (k, v)).collect();
        Ok((g, out, param_ids))
    }

    /// Predict the velocity field over video tokens: `F̂ × h × w × d`.
    pub fn forward(
        &self,
        z_in: &AssembledInput,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
    ) -> Result<Array4<f64>> {
        let (g, out, _) = self.build_forward(z_in, cond, mask, false)?;
        let flat = g.value(out);
        let (h, w) = (z_in.height(), z_in.width());
        let d = self.config.latent_dim;
        Ok(Array4::from_shape_fn(
            (z_in.video_frames, h, w, d),
            |(f, i, j, c)| flat[[(f * h + i) * w + j, c]],
        ))
    }

    // ---------------------------------------------------------------------
    // Flow-matching loss
    // ---------------------------------------------------------------------

    /// Loss at a fixed `(t, eps)` pair: noise the clean latent, assemble,
    /// predict, and measure the squared error against the velocity target
    /// `z0 − eps`, averaged over all video-token elements.
    pub fn fm_loss_at(
        &self,
        z0: &VideoLatent,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
        t: f64,
        eps: &Array4<f64>,
        want_grads: bool,
    ) -> Result<LossReport> {
        let z_t = noise_latent(z0, t, eps)?;
        let cond_t = ConditioningBundle {
            timestep: t,
            ..cond.clone()
        };
        let z_in = assemble_for_model(&z_t, &cond_t)?;
        let (mut g, out, param_ids) = self.build_forward(&z_in, &cond_t, mask, want_grads)?;

        let (f_hat, h, w, d) = z0.data.dim();
        let target = Array2::from_shape_fn((f_hat * h * w, d), |(row, c)| {
            let f = row / (h * w);
            let i = row / w % h;
            let j = row % w;
            z0.data[[f, i, j, c]] - eps[[f, i, j, c]]
        });
        let loss_id = g.mse_against(out, Rc::new(target));
        let loss = g.value(loss_id)[[0, 0]];
        let grads = if want_grads {
            g.backward(loss_id);
            Some(
                param_ids
                    .iter()
                    .map(|(name, id)| (name.clone(), g.grad(*id)))
                    .collect(),
            )
        } else {
            None
        };
        Ok(LossReport { loss, t, grads })
    }

    /// Sample `t ~ U[0,1]` and gaussian noise, then evaluate the loss with
    /// gradients under the given admissibility mask.
    pub fn fm_loss_sampled<R: Rng + ?Sized>(
        &self,
        z0: &VideoLatent,
        cond: &ConditioningBundle,
        mask: &AttentionMask,
        rng: &mut R,
    ) -> Result<LossReport> {
        let t: f64 = rng.random();
        let eps = Array4::from_shape_fn(z0.data.dim(), |_| rng.sample(StandardNormal));
        self.fm_loss_at(z0, cond, mask, t, &eps, true)
    }

    /// Convenience wrapper deriving the admissibility mask from the bundle.
    pub fn fm_loss<R: Rng + ?Sized>(
        &self,
        z0: &VideoLatent,
        cond: &ConditioningBundle,
        rng: &mut R,
    ) -> Result<LossReport> {
        let (f_hat, h, w, _) = z0.data.dim();
        let mask = cond.attention_mask(f_hat, h, w);
        self.fm_loss_sampled(z0, cond, &mask, rng)
    }

    // ---------------------------------------------------------------------
    // Checkpointing
    // ---------------------------------------------------------------------

    /// Plain-text header (config + tensor directory) followed by a
    /// little-endian `f32` blob in directory order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        let c = &self.config;
        writeln!(out, "toydit-checkpoint v1")?;
        writeln!(out, "blocks {}", c.blocks)?;
        writeln!(out, "model_dim {}", c.model_dim)?;
        writeln!(out, "heads {}", c.heads)?;
        writeln!(out, "text_dim {}", c.text_dim)?;
        writeln!(out, "latent_dim {}", c.latent_dim)?;
        writeln!(out, "ffn_mult {}", c.ffn_mult)?;
        writeln!(out, "time_dim {}", c.time_dim)?;
        writeln!(out, "codec_patch {}", c.codec_patch)?;
        writeln!(out, "codec_seed {}", c.codec_seed)?;
        writeln!(out, "vocab_seed {}", c.vocab_seed)?;
        for (name, tensor) in &self.params {
            let (r, cl) = tensor.dim();
            writeln!(out, "tensor {name} {r} {cl}")?;
        }
        writeln!(out, "data")?;
        for tensor in self.params.values() {
            for &v in tensor.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ToyDiT> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let bad = |msg: String| Error::IncompatibleFile(format!("{}: {msg}", path.display()));

        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != "toydit-checkpoint v1" {
            return Err(bad("not a model checkpoint".into()));
        }

        let mut fields: BTreeMap<String, u64> = BTreeMap::new();
        let mut tensors: Vec<(String, usize, usize)> = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(bad("truncated header".into()));
            }
            let trimmed = line.trim_end();
            if trimmed == "data" {
                break;
            }
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            match parts.as_slice() {
                ["tensor", name, r, c] => {
                    let r = r.parse().map_err(|_| bad(format!("bad tensor row count in {trimmed}")))?;
                    let c = c.parse().map_err(|_| bad(format!("bad tensor col count in {trimmed}")))?;
                    tensors.push(((*name).to_string(), r, c));
                }
                [key, value] => {
                    let v = value
                        .parse()
                        .map_err(|_| bad(format!("bad value for {key}")))?;
                    fields.insert((*key).to_string(), v);
                }
                _ => return Err(bad(format!("unrecognized header line: {trimmed}"))),
            }
        }

        let get = |key: &str| -> Result<u64> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| bad(format!("missing header field {key}")))
        };
        let config = ModelConfig {
            blocks: get("blocks")? as usize,
            model_dim: get("model_dim")? as usize,
            heads: get("heads")? as usize,
            text_dim: get("text_dim")? as usize,
            latent_dim: get("latent_dim")? as usize,
            ffn_mult: get("ffn_mult")? as usize,
            time_dim: get("time_dim")? as usize,
            codec_patch: get("codec_patch")? as usize,
            codec_seed: get("codec_seed")?,
            vocab_seed: get("vocab_seed")?,
        };
        config.validate()?;

        let mut params = BTreeMap::new();
        for (name, r, c) in tensors {
            let mut buf = vec![0u8; r * c * 4];
            reader
                .read_exact(&mut buf)
                .map_err(|_| bad(format!("truncated data for tensor {name}")))?;
            let values: Vec<f64> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let tensor = Array2::from_shape_vec((r, c), values)
                .map_err(|_| bad(format!("bad shape for tensor {name}")))?;
            params.insert(name, tensor);
        }

        let model = ToyDiT { config, params };
        let reference = ToyDiT::new(model.config.clone(), 0)?;
        if reference.params.len() != model.params.len()
            || !reference
                .params
                .iter()
                .zip(&model.params)
                .all(|((an, av), (bn, bv))| an == bn && av.dim() == bv.dim())
        {
            return Err(bad("tensor directory does not match the configuration".into()));
        }
        Ok(model)
    }
}

/// The flow-matching objective on raw arrays: mean squared error between a
/// velocity prediction and the target `z0 − eps`.
pub fn velocity_mse(pred: &Array4<f64>, z0: &VideoLatent, eps: &Array4<f64>) -> f64 {
    assert_eq!(pred.dim(), z0.data.dim());
    assert_eq!(pred.dim(), eps.dim());
    let n = pred.len() as f64;
    pred.iter()
        .zip(z0.data.iter())
        .zip(eps.iter())
        .map(|((p, z), e)| ((z - e) - p).powi(2))
        .sum::<f64>()
        / n
}
