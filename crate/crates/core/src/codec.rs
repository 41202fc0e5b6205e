//! Mock invertible video and text codecs.
//!
//! The video codec is a stand-in for a learned VAE that keeps every shape
//! and information-flow contract while being exactly invertible: frames are
//! grouped temporally by 4 (with first-frame replication padding), each
//! non-overlapping `4 x p x p x 3` block is flattened to a `12p²` vector and
//! multiplied by a fixed seeded orthonormal matrix. Decoding applies the
//! transpose and drops the padding. The text codec hashes whitespace tokens
//! into a seeded embedding table.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::seeds::{mix, mix2, rng_from};

/// Frames per temporal compression group, fixed by the latent contract.
pub const TEMPORAL_GROUP: usize = 4;

/// Rows in the mock text-embedding table.
pub const TEXT_TABLE_ROWS: usize = 4096;

/// Default seed for the text-embedding table.
pub const DEFAULT_VOCAB_SEED: u64 = 0x7465_7874;

/// Compressed frame count for a source frame count `f`.
pub fn latent_frames(f: usize) -> usize {
    (f - 1) / TEMPORAL_GROUP + 1
}

// =========================================================================
// Types
// =========================================================================

/// Configuration of the mock video codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    /// Spatial patch size `p`; latent resolution is `(H/p, W/p)`.
    pub spatial_patch: usize,
    /// Seed of the orthonormal projection.
    pub projection_seed: u64,
}

impl Default for CodecConfig {
    fn default() -> CodecConfig {
        CodecConfig {
            spatial_patch: 2,
            projection_seed: 0x636f_6465,
        }
    }
}

impl CodecConfig {
    pub fn new(spatial_patch: usize, projection_seed: u64) -> Result<CodecConfig> {
        if spatial_patch == 0 || spatial_patch > 16 {
            return Err(Error::InvalidConfig(format!(
                "spatial patch {spatial_patch} outside [1, 16]"
            )));
        }
        Ok(CodecConfig {
            spatial_patch,
            projection_seed,
        })
    }

    /// Latent channel count: one temporal group of `p x p` RGB patches.
    pub fn latent_dim(&self) -> usize {
        3 * TEMPORAL_GROUP * self.spatial_patch * self.spatial_patch
    }
}

/// A video in latent space: `frames x height x width x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    pub data: Array4<f64>,
}

impl VideoLatent {
    pub fn frames(&self) -> usize {
        self.data.dim().0
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

    pub fn zeros_like(other: &VideoLatent) -> VideoLatent {
        VideoLatent {
            data: Array4::zeros(other.data.dim()),
        }
    }
}

/// Encoded text prompt: one embedding row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub data: Array2<f64>,
}

impl TextFeatures {
    pub fn tokens(&self) -> usize {
        self.data.dim().0
    }

    pub fn dim(&self) -> usize {
        self.data.dim().1
    }
}

/// A binary mask at latent resolution, replicated over the 4-channel
/// (temporal-group) axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    height: usize,
    width: usize,
    /// Row-major h*w cell values in {0,1}; channels are replication.
    cells: Vec<u8>,
}

impl LatentMask {
    pub fn all_ones(height: usize, width: usize) -> LatentMask {
        LatentMask {
            height,
            width,
            cells: vec![1; height * width],
        }
    }

    pub fn all_zeros(height: usize, width: usize) -> LatentMask {
        LatentMask {
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Whether the cell holds valid reference content.
    #[inline]
    pub fn valid(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.width + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.cells[i * self.width + j] = u8::from(value);
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Materialize as `h x w x 4` reals (the form that enters the model
    /// input channels).
    pub fn to_channels(&self) -> Array3<f64> {
        Array3::from_shape_fn((self.height, self.width, TEMPORAL_GROUP), |(i, j, _)| {
            f64::from(self.cells[i * self.width + j])
        })
    }
}

/// Downsample a pixel mask to latent resolution by max-pooling: a latent
/// cell is set when any pixel of its receptive field is foreground. The
/// pixel grid must tile exactly over the latent grid.
pub fn resize_mask_to_latent(mask: &BinaryMask, h: usize, w: usize) -> Result<LatentMask> {
    let (hp, wp) = (mask.height(), mask.width());
    if h == 0 || w == 0 || hp % h != 0 || wp % w != 0 {
        return Err(Error::ContractViolation(format!(
            "pixel mask {hp}x{wp} does not tile over latent grid {h}x{w}"
        )));
    }
    let (sy, sx) = (hp / h, wp / w);
    let mut latent = LatentMask::all_zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            'cell: for dy in 0..sy {
                for dx in 0..sx {
                    if mask.get(i * sy + dy, j * sx + dx) {
                        latent.set(i, j, true);
                        break 'cell;
                    }
                }
            }
        }
    }
    Ok(latent)
}

// =========================================================================
// Video codec
// =========================================================================

/// The mock video codec: a fixed orthonormal map over space-to-depth
/// blocks. Construct once and reuse; the matrix depends only on the config.
#[derive(Debug, Clone)]
pub struct MockCodec {
    config: CodecConfig,
    /// Orthonormal `D x D`, `D = 12 p²`.
    projection: Array2<f64>,
}

impl MockCodec {
    pub fn new(config: CodecConfig) -> MockCodec {
        let d = config.latent_dim();
        let projection = random_orthonormal(d, config.projection_seed);
        MockCodec { config, projection }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    /// Encode an `F x H x W x 3` video into its `F̂ x (H/p) x (W/p) x d`
    /// latent. The first frame is replicated in front so the padded length
    /// is `4·F̂` (3 copies whenever `F ≡ 1 mod 4`, which every pipeline
    /// default satisfies).
    pub fn encode_video(&self, frames: &Array4<f64>) -> Result<VideoLatent> {
        let (f, h_px, w_px, ch) = frames.dim();
        let p = self.config.spatial_patch;
        if f == 0 || ch != 3 {
            return Err(Error::ContractViolation(format!(
                "expected non-empty F x H x W x 3 video, got {f}x{h_px}x{w_px}x{ch}"
            )));
        }
        if h_px % p != 0 || w_px % p != 0 {
            return Err(Error::ContractViolation(format!(
                "frame size {h_px}x{w_px} not divisible by patch {p}"
            )));
        }
        let f_hat = latent_frames(f);
        let pad = TEMPORAL_GROUP * f_hat - f;
        let (h, w) = (h_px / p, w_px / p);
        let d = self.latent_dim();

        let mut latent = Array4::<f64>::zeros((f_hat, h, w, d));
        let mut block = vec![0.0f64; d];
        for fo in 0..f_hat {
            for by in 0..h {
                for bx in 0..w {
                    let mut idx = 0;
                    for t in 0..TEMPORAL_GROUP {
                        let src_frame = (TEMPORAL_GROUP * fo + t).saturating_sub(pad);
                        for py in 0..p {
                            for px in 0..p {
                                for c in 0..3 {
                                    block[idx] =
                                        frames[[src_frame, by * p + py, bx * p + px, c]];
                                    idx += 1;
                                }
                            }
                        }
                    }
                    for row in 0..d {
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += self.projection[[row, k]] * block[k];
                        }
                        latent[[fo, by, bx, row]] = acc;
                    }
                }
            }
        }
        Ok(VideoLatent { data: latent })
    }

    /// Decode a latent back to pixel space: transpose projection, inverse
    /// rearrangement, drop the 3 replicated lead frames, clamp to [−1,1].
    /// Exactly inverts `encode_video` whenever the source had `F ≡ 1 mod 4`.
    pub fn decode_video(&self, latent: &VideoLatent) -> Result<Array4<f64>> {
        let (f_hat, h, w, d) = latent.data.dim();
        let p = self.config.spatial_patch;
        if d != self.latent_dim() || f_hat == 0 {
            return Err(Error::ContractViolation(format!(
                "latent {f_hat}x{h}x{w}x{d} does not match codec d={}",
                self.latent_dim()
            )));
        }
        let padded_frames = TEMPORAL_GROUP * f_hat;
        let out_frames = padded_frames - (TEMPORAL_GROUP - 1);
        let mut padded = Array4::<f64>::zeros((padded_frames, h * p, w * p, 3));
        let mut block = vec![0.0f64; d];
        for fo in 0..f_hat {
            for by in 0..h {
                for bx in 0..w {
                    for (row, value) in block.iter_mut().enumerate() {
                        // Transpose multiply: block = Qᵀ z.
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += self.projection[[k, row]] * latent.data[[fo, by, bx, k]];
                        }
                        *value = acc;
                    }
                    let mut idx = 0;
                    for t in 0..TEMPORAL_GROUP {
                        for py in 0..p {
                            for px in 0..p {
                                for c in 0..3 {
                                    padded[[TEMPORAL_GROUP * fo + t, by * p + py, bx * p + px, c]] =
                                        block[idx];
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = Array4::<f64>::zeros((out_frames, h * p, w * p, 3));
        for f in 0..out_frames {
            for r in 0..h * p {
                for c in 0..w * p {
                    for k in 0..3 {
                        out[[f, r, c, k]] =
                            padded[[f + TEMPORAL_GROUP - 1, r, c, k]].clamp(-1.0, 1.0);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Encode a single image as a one-frame video; returns the `h x w x d`
    /// latent frame.
    pub fn encode_reference(&self, image: &Array3<f64>) -> Result<Array3<f64>> {
        let (h_px, w_px, ch) = image.dim();
        let frames = Array4::from_shape_fn((1, h_px, w_px, ch), |(_, r, c, k)| image[[r, c, k]]);
        let latent = self.encode_video(&frames)?;
        let (_, h, w, d) = latent.data.dim();
        Ok(Array3::from_shape_fn((h, w, d), |(i, j, k)| {
            latent.data[[0, i, j, k]]
        }))
    }
}

/// Dense gaussian matrix orthonormalized by modified Gram-Schmidt.
fn random_orthonormal(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(mix(seed, 0x6f72_7468));
    let mut q = Array2::<f64>::zeros((d, d));
    for row in 0..d {
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            // Project out the previous rows.
            for prev in 0..row {
                let dot: f64 = (0..d).map(|k| q[[prev, k]] * v[k]).sum();
                for k in 0..d {
                    v[k] -= dot * q[[prev, k]];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for k in 0..d {
                    q[[row, k]] = v[k] / norm;
                }
                break;
            }
        }
    }
    q
}

// =========================================================================
// Text codec
// =========================================================================

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Embedding row `row` of the seeded table (rows `0..TEXT_TABLE_ROWS` for
/// tokens; row `TEXT_TABLE_ROWS` is the designated null embedding).
fn embedding_row(row: usize, dim: usize, vocab_seed: u64) -> Vec<f64> {
    let mut rng = rng_from(mix2(vocab_seed, 0x656d_6264, row as u64));
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Encode a prompt: whitespace tokens hashed into the embedding table. The
/// empty prompt maps to a single null-token embedding, so the output always
/// has at least one row.
pub fn encode_text(prompt: &str, dim: usize, vocab_seed: u64) -> TextFeatures {
    let tokens: Vec<&str> = prompt.split_whitespace().collect();
    let rows: Vec<Vec<f64>> = if tokens.is_empty() {
        vec![embedding_row(TEXT_TABLE_ROWS, dim, vocab_seed)]
    } else {
        tokens
            .iter()
            .map(|tok| {
                let row = (fnv1a64(tok.as_bytes()) % TEXT_TABLE_ROWS as u64) as usize;
                embedding_row(row, dim, vocab_seed)
            })
            .collect()
    };
    let data = Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j]);
    TextFeatures { data }
}

// =========================================================================
// Disk formats
// =========================================================================

/// Plain-text metadata stored next to a video's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub caption: String,
}

/// Map a value in [−1,1] to a display byte.
pub fn value_to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Map a display byte back to [−1,1].
pub fn byte_to_value(b: u8) -> f64 {
    f64::from(b) / 255.0 * 2.0 - 1.0
}

/// Convert one frame to an 8-bit RGB image.
pub fn frame_to_rgb(frame: &ndarray::ArrayView3<'_, f64>) -> image::RgbImage {
    let (h, w, _) = frame.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        image::Rgb([
            value_to_byte(frame[[r, c, 0]]),
            value_to_byte(frame[[r, c, 1]]),
            value_to_byte(frame[[r, c, 2]]),
        ])
    })
}

/// Convert an 8-bit RGB image to a [−1,1] frame.
pub fn rgb_to_frame(img: &image::RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, k)| {
        byte_to_value(img.get_pixel(c as u32, r as u32).0[k])
    })
}

/// Write a video as `frame_00000.png`... plus `meta.txt` in `dir`.
pub fn save_video_dir(dir: &Path, video: &Array4<f64>, meta: &VideoMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (f, h, w, _) = video.dim();
    if f != meta.frames || h != meta.height || w != meta.width {
        return Err(Error::ContractViolation(format!(
            "video {f}x{h}x{w} does not match meta {}x{}x{}",
            meta.frames, meta.height, meta.width
        )));
    }
    for i in 0..f {
        let frame = video.index_axis(ndarray::Axis(0), i);
        frame_to_rgb(&frame).save(dir.join(format!("frame_{i:05}.png")))?;
    }
    let text = format!(
        "frames {}\nheight {}\nwidth {}\nfps {}\ncaption {}\n",
        meta.frames, meta.height, meta.width, meta.fps, meta.caption
    );
    std::fs::write(dir.join("meta.txt"), text)?;
    Ok(())
}

/// Read a video directory written by [`save_video_dir`].
pub fn load_video_dir(dir: &Path) -> Result<(Array4<f64>, VideoMeta)> {
    let meta_text = std::fs::read_to_string(dir.join("meta.txt"))?;
    let mut frames = None;
    let mut height = None;
    let mut width = None;
    let mut fps = None;
    let mut caption = String::new();
    for line in meta_text.lines() {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "frames" => frames = value.trim().parse().ok(),
            "height" => height = value.trim().parse().ok(),
            "width" => width = value.trim().parse().ok(),
            "fps" => fps = value.trim().parse().ok(),
            "caption" => caption = value.trim().to_string(),
            _ => {}
        }
    }
    let meta = VideoMeta {
        frames: frames.ok_or_else(|| Error::Parse("meta.txt missing frames".into()))?,
        height: height.ok_or_else(|| Error::Parse("meta.txt missing height".into()))?,
        width: width.ok_or_else(|| Error::Parse("meta.txt missing width".into()))?,
        fps: fps.ok_or_else(|| Error::Parse("meta.txt missing fps".into()))?,
        caption,
    };
    let mut video = Array4::<f64>::zeros((meta.frames, meta.height, meta.width, 3));
    for i in 0..meta.frames {
        let path = dir.join(format!("frame_{i:05}.png"));
        let img = image::open(&path)?.to_rgb8();
        if img.dimensions() != (meta.width as u32, meta.height as u32) {
            return Err(Error::IncompatibleFile(format!(
                "{} has size {:?}, meta says {}x{}",
                path.display(),
                img.dimensions(),
                meta.width,
                meta.height
            )));
        }
        let frame = rgb_to_frame(&img);
        for r in 0..meta.height {
            for c in 0..meta.width {
                for k in 0..3 {
                    video[[i, r, c, k]] = frame[[r, c, k]];
                }
            }
        }
    }
    Ok((video, meta))
}

const LATENT_MAGIC: u32 = 0x5256_4c31; // "RVL1"
const LATENT_VERSION: u32 = 1;

/// Serialize a latent: 8 little-endian u32 header words (magic, version,
/// F̂, h, w, d, seed-low, seed-high) followed by the f32 data blob.
pub fn save_latent(path: &Path, latent: &VideoLatent, projection_seed: u64) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let (f_hat, h, w, d) = latent.data.dim();
    let header = [
        LATENT_MAGIC,
        LATENT_VERSION,
        f_hat as u32,
        h as u32,
        w as u32,
        d as u32,
        (projection_seed & 0xffff_ffff) as u32,
        (projection_seed >> 32) as u32,
    ];
    let mut bytes = Vec::with_capacity(32 + latent.data.len() * 4);
    for word in header {
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    for &v in latent.data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Read a latent file; returns the tensor and the projection seed it was
/// produced with.
pub fn load_latent(path: &Path) -> Result<(VideoLatent, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(Error::IncompatibleFile(format!(
            "{}: too short for a latent header",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != LATENT_MAGIC || word(1) != LATENT_VERSION {
        return Err(Error::IncompatibleFile(format!(
            "{}: bad magic/version {:#x}/{}",
            path.display(),
            word(0),
            word(1)
        )));
    }
    let (f_hat, h, w, d) = (
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
        word(5) as usize,
    );
    let seed = u64::from(word(6)) | (u64::from(word(7)) << 32);
    let count = f_hat * h * w * d;
    if bytes.len() != 32 + 4 * count {
        return Err(Error::IncompatibleFile(format!(
            "{}: payload {} bytes, header implies {}",
            path.display(),
            bytes.len() - 32,
            4 * count
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let off = 32 + 4 * i;
        values.push(f64::from(f32::from_le_bytes(
            bytes[off..off + 4].try_into().unwrap(),
        )));
    }
    let data = Array4::from_shape_vec((f_hat, h, w, d), values)
        .map_err(|e| Error::IncompatibleFile(e.to_string()))?;
    Ok((VideoLatent { data }, seed))
}

/// Write a mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let img = image::GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

/// Read a mask from a grayscale PNG (any value > 127 is foreground).
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut mask = BinaryMask::new_empty(h as usize, w as usize);
    for y in 0..h {
        for x in 0..w {
            if img.get_pixel(x, y).0[0] > 127 {
                mask.set(y as usize, x as usize, true);
            }
        }
    }
    Ok(mask)
}
