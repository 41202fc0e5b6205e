//! Command-line driver for the masked-reference video pipeline.
//!
//! One subcommand per pipeline stage: mask generation, augmentation
//! preview, synthetic-dataset emission, input inspection, training,
//! generation, contact sheets, and a self-test sweep. Every subcommand
//! honors `--seed` and is bit-reproducible; commands that write artifacts
//! echo their effective configuration to a sidecar text file next to the
//! outputs.
//!
//! Exit codes: 0 success, 1 bad usage or rejected argument values, 2
//! runtime failure. Failures print one diagnostic line to stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::{Array3, Array4};
use rand::seq::IndexedRandom;
use rand::Rng;

use refvid_core::augment::{make_masked_reference, AugmentConfig};
use refvid_core::codec::{
    frame_to_rgb, latent_frames, load_mask_png, rgb_to_frame, save_mask_png, CodecConfig,
    MockCodec, VideoLatent,
};
use refvid_core::conditioning::MASK_CHANNELS;
use refvid_core::dataset::{load_dataset, save_dataset, synth_dataset, DatasetItem};
use refvid_core::inference::{
    generate_video, sample_latent, segment_subject, GenerationRequest, PointTargetModel, RefMode,
    ReferenceInput, SamplerConfig,
};
use refvid_core::mask::topology::component_count;
use refvid_core::mask::{generate_mask, MaskSpec, RatioMixture, ShapeKind};
use refvid_core::model::{assemble_for_model, ConditioningBundle, ModelConfig, ToyDiT};
use refvid_core::seeds::{mix, mix2, rng_from};
use refvid_core::trainer::{build_training_example, train, write_loss_trace, AdamW, TrainConfig};
use refvid_core::Error as CoreError;

// =========================================================================
// Argument surface
// =========================================================================

#[derive(Parser)]
#[command(
    name = "refvid",
    version,
    about = "Masked-reference video pipeline: masks, augmentation, training, generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate exact-area binary masks as PNG files plus a manifest.
    Maskgen(MaskgenArgs),
    /// Augment one image/mask pair and write the warped artifacts.
    Augment(AugmentArgs),
    /// Emit a synthetic moving-shapes video dataset.
    SynthData(SynthDataArgs),
    /// Print the assembled-input layout and attention statistics of one
    /// training example.
    InspectInput(InspectArgs),
    /// Train the toy model on a dataset directory.
    Train(TrainArgs),
    /// Generate a video from a checkpoint, prompt and reference images.
    Generate(GenerateArgs),
    /// Tile a directory of frames into one contact-sheet image.
    Grid(GridArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct MaskgenArgs {
    /// Shape family: ellipse | fourier | convex | concave | all.
    #[arg(long, default_value = "all")]
    shape: String,
    /// Mask size as HxW.
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Fixed foreground area ratio in [0, 1]; omit to draw from the mixture.
    #[arg(long, conflicts_with = "mixture")]
    ratio: Option<f64>,
    /// Named ratio mixture (only "default" exists).
    #[arg(long, default_value = "default")]
    mixture: String,
    /// Number of masks to emit.
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input image (PNG/any common raster format).
    #[arg(long)]
    image: PathBuf,
    /// Binary mask PNG (0 background, nonzero foreground), same size.
    #[arg(long)]
    mask: PathBuf,
    /// Disable the random affine (identity warp).
    #[arg(long)]
    no_aug: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthDataArgs {
    /// Number of videos.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Frame size as HxW.
    #[arg(long, default_value = "16x16")]
    size: String,
    #[arg(long, default_value_t = 8.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset directory (as written by synth-data).
    #[arg(long)]
    data: PathBuf,
    /// Which dataset item to inspect.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Reference count for the example.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Model preset: default | tiny.
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Model preset: default | tiny.
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Reference count range as LO..HI (or a single number).
    #[arg(long, default_value = "0..3")]
    k_range: String,
    /// Comma-separated shape kinds (ellipse, fourier, convex, concave) or
    /// "all".
    #[arg(long, default_value = "all")]
    mask_types: String,
    /// Pin every mask to one exact area ratio.
    #[arg(long)]
    fixed_ratio: Option<f64>,
    /// Disable mask augmentation.
    #[arg(long)]
    no_aug: bool,
    /// Fully permissive attention (ablation).
    #[arg(long)]
    no_attn_mask: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "")]
    prompt: String,
    /// Reference spec IMG[:MASK][:bg], repeatable. ":bg" marks a whole-scene
    /// reference; otherwise the subject is segmented unless MASK is given.
    #[arg(long = "ref")]
    refs: Vec<String>,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Output size as HxW.
    #[arg(long, default_value = "16x16")]
    size: String,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Classifier-free guidance scale.
    #[arg(long, default_value_t = 5.0)]
    cfg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Directory of equally sized PNG frames.
    #[arg(long)]
    frames: PathBuf,
    /// Output image file.
    #[arg(long)]
    out: PathBuf,
    /// Columns; 0 picks a near-square layout.
    #[arg(long, default_value_t = 0)]
    cols: usize,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

// =========================================================================
// Entry point
// =========================================================================

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Maskgen(args) => cmd_maskgen(&args),
        Command::Augment(args) => cmd_augment(&args),
        Command::SynthData(args) => cmd_synth_data(&args),
        Command::InspectInput(args) => cmd_inspect_input(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Grid(args) => cmd_grid(&args),
        Command::Selftest(args) => cmd_selftest(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Rejected argument values are usage errors; everything else is
            // a runtime failure.
            match err.downcast_ref::<CoreError>() {
                Some(CoreError::InvalidConfig(_)) | Some(CoreError::UnsatisfiableShape(_)) => 1,
                _ => 2,
            }
        }
    }
}

// =========================================================================
// Shared parsing and plumbing
// =========================================================================

fn invalid(msg: String) -> anyhow::Error {
    anyhow::Error::new(CoreError::InvalidConfig(msg))
}

fn parse_size(text: &str) -> anyhow::Result<(usize, usize)> {
    let (h, w) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| invalid(format!("size '{text}' is not HxW")))?;
    let parse = |part: &str| {
        part.trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("size component '{part}' is not a positive integer")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn parse_k_range(text: &str) -> anyhow::Result<(usize, usize)> {
    if let Some((lo, hi)) = text.split_once("..") {
        let parse = |part: &str| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("range bound '{part}' is not an integer")))
        };
        Ok((parse(lo)?, parse(hi)?))
    } else {
        let k = text
            .trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("k-range '{text}' is neither LO..HI nor a number")))?;
        Ok((k, k))
    }
}

fn parse_kind(name: &str) -> anyhow::Result<ShapeKind> {
    match name.trim() {
        "ellipse" => Ok(ShapeKind::Ellipse),
        "fourier" => Ok(ShapeKind::FourierBlob),
        "convex" => Ok(ShapeKind::ConvexPolygon),
        "concave" => Ok(ShapeKind::ConcavePolygon),
        other => Err(invalid(format!(
            "unknown shape kind '{other}' (expected ellipse, fourier, convex, concave or all)"
        ))),
    }
}

fn parse_kind_set(text: &str) -> anyhow::Result<Vec<ShapeKind>> {
    if text.trim() == "all" {
        return Ok(ShapeKind::ALL.to_vec());
    }
    text.split(',').map(parse_kind).collect()
}

fn kind_name(kind: ShapeKind) -> &'static str {
    match kind {
        ShapeKind::Ellipse => "ellipse",
        ShapeKind::FourierBlob => "fourier",
        ShapeKind::ConvexPolygon => "convex",
        ShapeKind::ConcavePolygon => "concave",
    }
}

fn parse_model_preset(name: &str) -> anyhow::Result<ModelConfig> {
    match name {
        "default" => Ok(ModelConfig::default()),
        "tiny" => Ok(ModelConfig::tiny()),
        other => Err(invalid(format!(
            "unknown model preset '{other}' (expected default or tiny)"
        ))),
    }
}

/// Echo the effective configuration next to the outputs: `run_config.txt`
/// inside directory outputs, `<file>.run.txt` beside file outputs.
fn write_run_config(out: &Path, is_dir: bool, entries: &[(&str, String)]) -> anyhow::Result<()> {
    let path = if is_dir {
        out.join("run_config.txt")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".run.txt");
        out.with_file_name(name)
    };
    let mut text = String::new();
    for (key, value) in entries {
        writeln!(text, "{key} {value}").expect("string write");
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_image(path: &Path) -> anyhow::Result<Array3<f64>> {
    let img = image::open(path)
        .with_context(|| format!("opening image {}", path.display()))?
        .to_rgb8();
    Ok(rgb_to_frame(&img))
}

fn save_frame_png(path: &Path, frame: &ndarray::ArrayView3<'_, f64>) -> anyhow::Result<()> {
    frame_to_rgb(frame)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// =========================================================================
// maskgen
// =========================================================================

fn cmd_maskgen(args: &MaskgenArgs) -> anyhow::Result<()> {
    let (h, w) = parse_size(&args.size)?;
    if args.mixture != "default" {
        return Err(invalid(format!(
            "unknown mixture '{}' (only \"default\" exists)",
            args.mixture
        )));
    }
    let kinds: Vec<ShapeKind> = if args.shape == "all" {
        ShapeKind::ALL.to_vec()
    } else {
        vec![parse_kind(&args.shape)?]
    };
    let mixture = RatioMixture::training_default();

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = String::from("file kind ratio count seed\n");
    for i in 0..args.count {
        let mut rng = rng_from(mix2(args.seed, 0x6d61_736b, i as u64));
        let mut produced = None;
        for _ in 0..16 {
            let ratio = args.ratio.unwrap_or_else(|| mixture.sample(&mut rng));
            let kind = *kinds.choose(&mut rng).expect("non-empty kinds");
            let mask_seed: u64 = rng.random();
            let spec = MaskSpec::new(kind, h, w, ratio, mask_seed)?;
            match generate_mask(&spec) {
                Ok(mask) => {
                    produced = Some((mask, kind, ratio, mask_seed));
                    break;
                }
                Err(CoreError::GenerationFailure { .. }) => continue,
                Err(other) => return Err(other.into()),
            }
        }
        let (mask, kind, ratio, mask_seed) =
            produced.ok_or_else(|| anyhow::Error::new(CoreError::GenerationFailure { attempts: 16 }))?;
        let name = format!("mask_{i:05}.png");
        save_mask_png(&args.out.join(&name), &mask)?;
        writeln!(
            manifest,
            "{name} {} {ratio:.6} {} {mask_seed}",
            kind_name(kind),
            mask.foreground_count()
        )
        .expect("string write");
    }
    std::fs::write(args.out.join("manifest.txt"), manifest)?;
    write_run_config(
        &args.out,
        true,
        &[
            ("command", "maskgen".into()),
            ("shape", args.shape.clone()),
            ("size", format!("{h}x{w}")),
            (
                "ratio",
                args.ratio.map_or("mixture:default".into(), |r| r.to_string()),
            ),
            ("count", args.count.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    println!("wrote {} masks to {}", args.count, args.out.display());
    Ok(())
}

// =========================================================================
// augment
// =========================================================================

fn cmd_augment(args: &AugmentArgs) -> anyhow::Result<()> {
    let image = load_image(&args.image)?;
    let mask = load_mask_png(&args.mask)?;
    let config = if args.no_aug {
        AugmentConfig::disabled()
    } else {
        AugmentConfig::default()
    };
    let mut rng = rng_from(mix(args.seed, 0x6175_6766));
    let out = make_masked_reference(&image, &mask, &config, &mut rng)?;

    std::fs::create_dir_all(&args.out)?;
    save_frame_png(&args.out.join("augmented_image.png"), &out.image.view())?;
    save_mask_png(&args.out.join("augmented_mask.png"), &out.mask)?;
    save_frame_png(
        &args.out.join("masked_frame.png"),
        &out.masked_frame.view(),
    )?;
    write_run_config(
        &args.out,
        true,
        &[
            ("command", "augment".into()),
            ("image", args.image.display().to_string()),
            ("mask", args.mask.display().to_string()),
            ("no_aug", args.no_aug.to_string()),
            ("seed", args.seed.to_string()),
            (
                "params",
                format!(
                    "rotation {:.4} scale {:.4} shear {:.4} translate ({:.4}, {:.4}) hflip {}",
                    out.params.rotation_deg,
                    out.params.scale,
                    out.params.shear_deg,
                    out.params.translate.0,
                    out.params.translate.1,
                    out.params.hflip
                ),
            ),
        ],
    )?;
    println!(
        "augmented {} (+mask) into {}",
        args.image.display(),
        args.out.display()
    );
    Ok(())
}

// =========================================================================
// synth-data
// =========================================================================

fn cmd_synth_data(args: &SynthDataArgs) -> anyhow::Result<()> {
    let (h, w) = parse_size(&args.size)?;
    let samples = synth_dataset(args.count, args.frames, h, w, args.seed)?;
    save_dataset(&args.out, &samples, args.fps)?;
    write_run_config(
        &args.out,
        true,
        &[
            ("command", "synth-data".into()),
            ("count", args.count.to_string()),
            ("frames", args.frames.to_string()),
            ("size", format!("{h}x{w}")),
            ("fps", args.fps.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    println!(
        "wrote {} videos ({} frames, {h}x{w}) to {}",
        args.count,
        args.frames,
        args.out.display()
    );
    Ok(())
}

// =========================================================================
// inspect-input
// =========================================================================

fn cmd_inspect_input(args: &InspectArgs) -> anyhow::Result<()> {
    let model_cfg = parse_model_preset(&args.model)?;
    model_cfg.validate()?;
    let items = load_dataset(&args.data)?;
    let item = items
        .get(args.index)
        .ok_or_else(|| invalid(format!(
            "index {} out of range for dataset of {}",
            args.index,
            items.len()
        )))?;

    let codec = MockCodec::new(CodecConfig::new(model_cfg.codec_patch, model_cfg.codec_seed)?);
    let train_cfg = TrainConfig {
        ref_count_range: (args.k, args.k),
        caption_dropout: 0.0,
        ..TrainConfig::default()
    };
    let mut rng = rng_from(mix(args.seed, 0x696e_7370));
    let example = build_training_example(
        &codec,
        &model_cfg,
        &item.video,
        &item.caption,
        &train_cfg,
        &mut rng,
    )?;

    let assembled = assemble_for_model(&example.z0, &example.cond)?;
    let d = model_cfg.latent_dim;
    let (f, hp, wp, _) = item.video.dim();
    let (f_hat, h, w, _) = example.z0.data.dim();
    println!("caption: {}", item.caption);
    println!("video: {f} x {hp} x {wp} x 3 (frames x height x width x rgb)");
    println!("latent: {f_hat} x {h} x {w} x {d}");
    println!(
        "assembled: {} x {} x {} x {} (video slots + reference slots, channels {d} latent | {MASK_CHANNELS} mask | {d} auxiliary)",
        assembled.data.dim().0,
        assembled.height(),
        assembled.width(),
        assembled.channels()
    );
    println!("slots: {} video + {} reference", assembled.video_frames, assembled.ref_frames);
    println!("references:");
    for (i, detail) in example.references.iter().enumerate() {
        let valid = example.cond.refs[i].1.valid_count();
        println!(
            "  ref {i}: source frame {}, kind {}, ratio {:.4}, pixels {}, valid latent cells {valid}/{}",
            detail.frame_index,
            kind_name(detail.kind),
            detail.ratio,
            detail.generated_mask.foreground_count(),
            h * w
        );
    }
    let counts = example.attn.rule_counts();
    let tokens = example.attn.len();
    println!("admissibility (query -> key):");
    println!("  video->video: {}", counts.video_to_video);
    println!("  video->ref: {}", counts.video_to_ref);
    println!("  ref->video: {}", counts.ref_to_video);
    println!("  ref->ref: {}", counts.ref_to_ref);
    println!("  invalid self-loops: {}", counts.invalid_self);
    println!("  total admissible: {} of {}", counts.total(), tokens * tokens);
    Ok(())
}

// =========================================================================
// train
// =========================================================================

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let model_cfg = parse_model_preset(&args.model)?;
    let cfg = TrainConfig {
        ref_count_range: parse_k_range(&args.k_range)?,
        lr: args.lr,
        batch_size: args.batch,
        steps: args.steps,
        seed: args.seed,
        mask_types: parse_kind_set(&args.mask_types)?,
        fixed_ratio: args.fixed_ratio,
        disable_augment: args.no_aug,
        disable_attn_mask: args.no_attn_mask,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let items = load_dataset(&args.data)?;

    let mut model = ToyDiT::new(model_cfg, mix(args.seed, 0x696e_6974))?;
    let mut opt = AdamW::new();
    let trace = train(&mut model, &mut opt, &cfg, &items)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    model.save(&args.out)?;
    let loss_path = args
        .out
        .parent()
        .map_or_else(|| PathBuf::from("loss.tsv"), |p| p.join("loss.tsv"));
    write_loss_trace(&loss_path, &trace)?;
    write_run_config(
        &args.out,
        false,
        &[
            ("command", "train".into()),
            ("data", args.data.display().to_string()),
            ("model", args.model.clone()),
            ("steps", args.steps.to_string()),
            ("lr", args.lr.to_string()),
            ("batch", args.batch.to_string()),
            ("k_range", format!("{}..{}", cfg.ref_count_range.0, cfg.ref_count_range.1)),
            ("mask_types", args.mask_types.clone()),
            (
                "fixed_ratio",
                args.fixed_ratio.map_or("none".into(), |r| r.to_string()),
            ),
            ("no_aug", args.no_aug.to_string()),
            ("no_attn_mask", args.no_attn_mask.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    let first = trace.first().map_or(f64::NAN, |(_, l)| *l);
    let last = trace.last().map_or(f64::NAN, |(_, l)| *l);
    println!(
        "trained {} steps (loss {first:.4} -> {last:.4}); checkpoint {}",
        trace.len(),
        args.out.display()
    );
    Ok(())
}

// =========================================================================
// generate
// =========================================================================

fn parse_ref_spec(spec: &str) -> anyhow::Result<ReferenceInput> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (image_path, mask_path, bg) = match parts.as_slice() {
        [img] => (*img, None, false),
        [img, "bg"] => (*img, None, true),
        [img, mask] => (*img, Some(*mask), false),
        [_, _, "bg"] => {
            return Err(invalid(format!(
                "reference '{spec}': a mask cannot be combined with :bg (whole-scene references use the full frame)"
            )))
        }
        _ => {
            return Err(invalid(format!(
                "reference '{spec}' is not IMG[:MASK][:bg]"
            )))
        }
    };
    let image = load_image(Path::new(image_path))?;
    let mask = mask_path
        .map(|p| load_mask_png(Path::new(p)))
        .transpose()?;
    Ok(ReferenceInput {
        image,
        mask,
        mode: if bg {
            RefMode::BackgroundScene
        } else {
            RefMode::Subject
        },
    })
}

/// Tile equally sized frames into a near-square sheet with a 2 px gutter.
fn tile_frames(frames: &[image::RgbImage], cols: usize) -> anyhow::Result<image::RgbImage> {
    let first = frames
        .first()
        .ok_or_else(|| invalid("no frames to tile".into()))?;
    let (fw, fh) = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != (fw, fh)) {
        return Err(invalid("frames differ in size".into()));
    }
    let n = frames.len();
    let cols = if cols == 0 {
        (n as f64).sqrt().ceil() as usize
    } else {
        cols
    }
    .max(1);
    let rows = n.div_ceil(cols);
    const GUTTER: u32 = 2;
    let sheet_w = cols as u32 * (fw + GUTTER) - GUTTER;
    let sheet_h = rows as u32 * (fh + GUTTER) - GUTTER;
    let mut sheet = image::RgbImage::from_pixel(sheet_w, sheet_h, image::Rgb([32, 32, 32]));
    for (i, frame) in frames.iter().enumerate() {
        let ox = (i % cols) as u32 * (fw + GUTTER);
        let oy = (i / cols) as u32 * (fh + GUTTER);
        for y in 0..fh {
            for x in 0..fw {
                sheet.put_pixel(ox + x, oy + y, *frame.get_pixel(x, y));
            }
        }
    }
    Ok(sheet)
}

fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let (h, w) = parse_size(&args.size)?;
    let model = ToyDiT::load(&args.ckpt)?;
    let references: Vec<ReferenceInput> = args
        .refs
        .iter()
        .map(|spec| parse_ref_spec(spec))
        .collect::<anyhow::Result<_>>()?;
    let request = GenerationRequest {
        prompt: args.prompt.clone(),
        references,
        frames: args.frames,
        height: h,
        width: w,
    };
    let sampler = SamplerConfig {
        steps: args.steps,
        guidance_scale: args.cfg,
        seed: args.seed,
    };
    let result = generate_video(&model, &request, &sampler)?;

    std::fs::create_dir_all(&args.out)?;
    let mut frame_images = Vec::with_capacity(args.frames);
    for f in 0..args.frames {
        let view = result.video.index_axis(ndarray::Axis(0), f);
        let path = args.out.join(format!("frame_{f:05}.png"));
        save_frame_png(&path, &view)?;
        frame_images.push(frame_to_rgb(&view));
    }
    for (i, prepared) in result.references.iter().enumerate() {
        save_frame_png(
            &args.out.join(format!("reference_{i:02}.png")),
            &prepared.masked_image.view(),
        )?;
    }
    let sheet = tile_frames(&frame_images, 0)?;
    sheet
        .save(args.out.join("grid.png"))
        .context("writing grid.png")?;
    write_run_config(
        &args.out,
        true,
        &[
            ("command", "generate".into()),
            ("ckpt", args.ckpt.display().to_string()),
            ("prompt", args.prompt.clone()),
            ("refs", args.refs.join(" ")),
            ("frames", args.frames.to_string()),
            ("size", format!("{h}x{w}")),
            ("steps", args.steps.to_string()),
            ("cfg", args.cfg.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    println!(
        "generated {} frames at {h}x{w} into {}",
        args.frames,
        args.out.display()
    );
    Ok(())
}

// =========================================================================
// grid
// =========================================================================

fn cmd_grid(args: &GridArgs) -> anyhow::Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.frames)
        .with_context(|| format!("reading {}", args.frames.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    // Inside a mixed output directory, tile only the frame sequence.
    let frame_files: Vec<PathBuf> = paths
        .iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_"))
        })
        .cloned()
        .collect();
    if !frame_files.is_empty() {
        paths = frame_files;
    }
    paths.sort();
    let frames: Vec<image::RgbImage> = paths
        .iter()
        .map(|p| {
            Ok(image::open(p)
                .with_context(|| format!("opening {}", p.display()))?
                .to_rgb8())
        })
        .collect::<anyhow::Result<_>>()?;
    let sheet = tile_frames(&frames, args.cols)?;
    sheet
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    write_run_config(
        &args.out,
        false,
        &[
            ("command", "grid".into()),
            ("frames", args.frames.display().to_string()),
            ("cols", args.cols.to_string()),
            ("tiles", frames.len().to_string()),
        ],
    )?;
    println!("tiled {} frames into {}", frames.len(), args.out.display());
    Ok(())
}

// =========================================================================
// selftest
// =========================================================================

fn cmd_selftest(args: &SelftestArgs) -> anyhow::Result<()> {
    let seed = args.seed;
    let mut passed = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| -> anyhow::Result<()> {
        if ok {
            println!("ok {name}");
            passed += 1;
            Ok(())
        } else {
            Err(anyhow!("selftest {name} failed: {detail}"))
        }
    };

    // Exact-count, connected masks across every kind.
    {
        let mixture = RatioMixture::training_default();
        let mut all_ok = true;
        let mut detail = String::new();
        let mut rng = rng_from(mix(seed, 1));
        for i in 0..24 {
            let kind = ShapeKind::ALL[i % 4];
            let ratio = mixture.sample(&mut rng);
            let spec = MaskSpec::new(kind, 64, 64, ratio, rng.random())?;
            let mask = match generate_mask(&spec) {
                Ok(m) => m,
                Err(CoreError::GenerationFailure { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            if mask.foreground_count() != spec.target_count() || component_count(&mask) != 1 {
                all_ok = false;
                detail = format!(
                    "kind {} ratio {ratio:.4}: count {} target {} components {}",
                    kind_name(kind),
                    mask.foreground_count(),
                    spec.target_count(),
                    component_count(&mask)
                );
                break;
            }
        }
        check("mask exactness and connectivity", all_ok, detail)?;
    }

    // Augmentation containment on small frames.
    {
        let mut all_ok = true;
        let mut detail = String::new();
        let image = Array3::<f64>::from_elem((32, 32, 3), 0.25);
        let config = AugmentConfig::default();
        for i in 0..30u64 {
            let mut rng = rng_from(mix2(seed, 2, i));
            let spec = MaskSpec::new(ShapeKind::ALL[(i % 4) as usize], 32, 32, 0.2, i)?;
            let Ok(mask) = generate_mask(&spec) else { continue };
            let out = make_masked_reference(&image, &mask, &config, &mut rng)?;
            for r in 0..32 {
                for c in 0..32 {
                    let fg = out.mask.get(r, c);
                    if fg && (r == 0 || c == 0 || r == 31 || c == 31) {
                        all_ok = false;
                        detail = format!("iteration {i}: foreground on border ({r},{c})");
                    }
                    if !fg && (0..3).any(|k| out.masked_frame[[r, c, k]] != 0.0) {
                        all_ok = false;
                        detail = format!("iteration {i}: off-mask content at ({r},{c})");
                    }
                }
            }
        }
        check("augmentation containment", all_ok, detail)?;
    }

    // Codec round trip and the latent-frame formula.
    {
        let codec = MockCodec::new(CodecConfig::default());
        let mut rng = rng_from(mix(seed, 3));
        let mut worst = 0.0f64;
        for f in [1usize, 5, 9] {
            let video = Array4::from_shape_fn((f, 16, 16, 3), |_| rng.random_range(-1.0..1.0));
            let back = codec.decode_video(&codec.encode_video(&video)?)?;
            for (a, b) in video.iter().zip(back.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        let formula_ok = [(1, 1), (5, 2), (9, 3), (17, 5), (81, 21)]
            .iter()
            .all(|&(f, f_hat)| latent_frames(f) == f_hat);
        check(
            "codec round trip",
            worst < 1e-5 && formula_ok,
            format!("max error {worst:.2e}, formula ok: {formula_ok}"),
        )?;
    }

    // Sampler exactness against the analytic velocity field.
    {
        let mut rng = rng_from(mix(seed, 4));
        let target = VideoLatent {
            data: Array4::from_shape_fn((2, 4, 4, 12), |_| rng.random_range(-1.0..1.0)),
        };
        let model = PointTargetModel {
            target: target.clone(),
        };
        let cond = ConditioningBundle {
            text: refvid_core::codec::encode_text("", 8, 0),
            refs: Vec::new(),
            timestep: 0.0,
        };
        let attn = cond.attention_mask(2, 4, 4);
        let mut worst = 0.0f64;
        for steps in [1usize, 10] {
            let cfg = SamplerConfig {
                steps,
                guidance_scale: 1.0,
                seed,
            };
            let out = sample_latent(&model, &cond, None, &attn, (2, 4, 4, 12), &cfg)?;
            for (a, b) in out.data.iter().zip(target.data.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        check(
            "sampler recovers the analytic target",
            worst < 1e-9,
            format!("max error {worst:.2e}"),
        )?;
    }

    // Model determinism and reference-order invariance.
    {
        let model = ToyDiT::new(ModelConfig::tiny(), mix(seed, 5))?;
        let codec = MockCodec::new(CodecConfig::new(1, ModelConfig::tiny().codec_seed)?);
        let mut rng = rng_from(mix(seed, 6));
        let video = Array4::from_shape_fn((1, 8, 8, 3), |_| rng.random_range(-1.0..1.0));
        let item = DatasetItem {
            video,
            caption: "selftest clip".into(),
        };
        let cfg = TrainConfig {
            ref_count_range: (2, 2),
            caption_dropout: 0.0,
            ..TrainConfig::default()
        };
        let ex = build_training_example(
            &codec,
            model.config(),
            &item.video,
            &item.caption,
            &cfg,
            &mut rng.clone(),
        )?;
        let a = model.fm_loss_at(&ex.z0, &ex.cond, &ex.attn, 0.5, &Array4::zeros(ex.z0.data.dim()), false)?;
        let b = model.fm_loss_at(&ex.z0, &ex.cond, &ex.attn, 0.5, &Array4::zeros(ex.z0.data.dim()), false)?;
        let mut swapped = ex.cond.clone();
        swapped.refs.reverse();
        let c = model.fm_loss_at(&ex.z0, &swapped, &swapped.attention_mask(1, 8, 8), 0.5, &Array4::zeros(ex.z0.data.dim()), false)?;
        check(
            "model determinism and reference-order invariance",
            a.loss == b.loss && (a.loss - c.loss).abs() < 1e-5,
            format!("losses {} / {} / {}", a.loss, b.loss, c.loss),
        )?;
    }

    // Segmentation sanity on a synthetic subject.
    {
        let image = Array3::from_shape_fn((24, 24, 3), |(r, c, k)| {
            let inside = (6..18).contains(&r) && (6..18).contains(&c);
            match (inside, k) {
                (true, 0) => 0.9,
                (true, _) => -0.7,
                (false, _) => 0.1,
            }
        });
        let mask = segment_subject(&image)?;
        check(
            "subject segmentation",
            mask.foreground_count() == 144,
            format!("segmented {} of 144 expected", mask.foreground_count()),
        )?;
    }

    println!("selftest: {passed} checks passed");
    Ok(())
}
