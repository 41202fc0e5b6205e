//! Synthetic moving-shape videos with template captions.
//!
//! Each sample renders one or two anti-aliased colored shapes (circle,
//! square, triangle) drifting with constant velocity and bouncing
//! elastically off the frame walls, over a solid achromatic background.
//! The scene descriptor is the ground truth for captions, segmentation
//! oracles, and hue checks; the caption is a deterministic template
//! rendering of it.

use std::path::Path;

use ndarray::Array4;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::codec::{load_video_dir, save_video_dir, VideoMeta};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::seeds::{mix2, rng_from};

// =========================================================================
// Palette
// =========================================================================

/// A named, fully saturated shape color (channel values in [−1, 1]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteColor {
    pub name: &'static str,
    pub rgb: [f64; 3],
    pub hue_degrees: f64,
}

/// Eight well-separated hues.
pub const SHAPE_COLORS: [PaletteColor; 8] = [
    PaletteColor { name: "red", rgb: [1.0, -1.0, -1.0], hue_degrees: 0.0 },
    PaletteColor { name: "orange", rgb: [1.0, 0.0, -1.0], hue_degrees: 30.0 },
    PaletteColor { name: "yellow", rgb: [1.0, 1.0, -1.0], hue_degrees: 60.0 },
    PaletteColor { name: "green", rgb: [-1.0, 1.0, -1.0], hue_degrees: 120.0 },
    PaletteColor { name: "cyan", rgb: [-1.0, 1.0, 1.0], hue_degrees: 180.0 },
    PaletteColor { name: "azure", rgb: [-1.0, 0.0, 1.0], hue_degrees: 210.0 },
    PaletteColor { name: "blue", rgb: [-1.0, -1.0, 1.0], hue_degrees: 240.0 },
    PaletteColor { name: "magenta", rgb: [1.0, -1.0, 1.0], hue_degrees: 300.0 },
];

/// Achromatic backgrounds, so chroma-based segmentation stays trivial.
pub const BACKGROUNDS: [(&str, [f64; 3]); 3] = [
    ("white", [0.9, 0.9, 0.9]),
    ("gray", [0.2, 0.2, 0.2]),
    ("black", [-0.7, -0.7, -0.7]),
];

/// Hue angle (degrees in [0, 360)) of an RGB triple in [−1, 1] space.
/// Achromatic inputs return 0.
pub fn rgb_hue_degrees(rgb: [f64; 3]) -> f64 {
    let r = (rgb[0] + 1.0) / 2.0;
    let g = (rgb[1] + 1.0) / 2.0;
    let b = (rgb[2] + 1.0) / 2.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta < 1e-12 {
        return 0.0;
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    hue.rem_euclid(360.0)
}

/// Absolute circular distance between two hue angles, in [0, 180].
pub fn hue_distance_degrees(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

// =========================================================================
// Scene descriptors
// =========================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
}

impl ShapeClass {
    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
        }
    }

    pub const ALL: [ShapeClass; 3] =
        [ShapeClass::Circle, ShapeClass::Square, ShapeClass::Triangle];
}

/// One moving shape. Positions and velocities are in pixel units with the
/// row axis pointing down; `radius` is the circumradius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeClass,
    pub color: PaletteColor,
    /// (row, col) of the center.
    pub center: (f64, f64),
    pub radius: f64,
    /// (rows, cols) per frame.
    pub velocity: (f64, f64),
}

/// Full scene state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescriptor {
    pub height: usize,
    pub width: usize,
    pub background_name: &'static str,
    pub background: [f64; 3],
    pub shapes: Vec<ShapeSpec>,
}

/// A rendered video with its caption and the frame-0 scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `F × H × W × 3`, values in [−1, 1].
    pub video: Array4<f64>,
    pub caption: String,
    pub scene: SceneDescriptor,
}

/// A (video, caption) pair as the trainer consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub video: Array4<f64>,
    pub caption: String,
}

// =========================================================================
// Simulation
// =========================================================================

/// Advance one shape by one frame: constant velocity with elastic
/// reflection once the circumradius touches a wall.
pub fn simulate_step(shape: &ShapeSpec, height: usize, width: usize) -> ShapeSpec {
    let mut s = *shape;
    let bounce = |pos: f64, vel: f64, lo: f64, hi: f64| -> (f64, f64) {
        let mut p = pos + vel;
        let mut v = vel;
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        }
        (p, v)
    };
    let (r, vr) = bounce(s.center.0, s.velocity.0, s.radius, height as f64 - s.radius);
    let (c, vc) = bounce(s.center.1, s.velocity.1, s.radius, width as f64 - s.radius);
    s.center = (r, c);
    s.velocity = (vr, vc);
    s
}

/// Advance the whole scene by one frame.
pub fn advance_scene(scene: &SceneDescriptor) -> SceneDescriptor {
    let mut next = scene.clone();
    next.shapes = scene
        .shapes
        .iter()
        .map(|s| simulate_step(s, scene.height, scene.width))
        .collect();
    next
}

// =========================================================================
// Rendering
// =========================================================================

/// Signed distance from point `(row, col)` to the shape boundary
/// (negative inside).
fn shape_sdf(shape: &ShapeSpec, row: f64, col: f64) -> f64 {
    let dr = row - shape.center.0;
    let dc = col - shape.center.1;
    match shape.kind {
        ShapeClass::Circle => (dr * dr + dc * dc).sqrt() - shape.radius,
        ShapeClass::Square => {
            // Half-side of the square inscribed in the circumradius.
            let half = shape.radius / std::f64::consts::SQRT_2;
            let qx = dc.abs() - half;
            let qy = dr.abs() - half;
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0)
        }
        ShapeClass::Triangle => {
            // Equilateral triangle, apex up: max of the three inward
            // half-plane distances (exact inside, adequate for AA outside).
            let mut dist = f64::NEG_INFINITY;
            let verts: Vec<(f64, f64)> = [-0.5, 1.0 / 6.0, 5.0 / 6.0]
                .iter()
                .map(|&turns| {
                    let a = turns * std::f64::consts::TAU;
                    (
                        shape.center.0 + shape.radius * a.sin(),
                        shape.center.1 + shape.radius * a.cos(),
                    )
                })
                .collect();
            for e in 0..3 {
                let (r0, c0) = verts[e];
                let (r1, c1) = verts[(e + 1) % 3];
                let (er, ec) = (r1 - r0, c1 - c0);
                let len = (er * er + ec * ec).sqrt();
                // Outward normal of edge (r0,c0)→(r1,c1) for a
                // counter-clockwise vertex order in (row-down, col-right)
                // coordinates.
                let d = ((row - r0) * -ec + (col - c0) * er) / len;
                dist = dist.max(d);
            }
            dist
        }
    }
}

/// Anti-aliased coverage in [0, 1]: a one-pixel linear ramp across the
/// boundary.
fn coverage(shape: &ShapeSpec, row: f64, col: f64) -> f64 {
    (0.5 - shape_sdf(shape, row, col)).clamp(0.0, 1.0)
}

/// Rasterize the scene into one `H × W × 3` frame.
pub fn render_scene(scene: &SceneDescriptor) -> Array4<f64> {
    let (h, w) = (scene.height, scene.width);
    let mut frame = Array4::<f64>::zeros((1, h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let (py, px) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut rgb = scene.background;
            for shape in &scene.shapes {
                let cov = coverage(shape, py, px);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - cov) + shape.color.rgb[c] * cov;
                }
            }
            for c in 0..3 {
                frame[[0, i, j, c]] = rgb[c];
            }
        }
    }
    frame
}

/// Render `frames` consecutive frames starting from `scene`.
pub fn render_video(scene: &SceneDescriptor, frames: usize) -> Array4<f64> {
    let (h, w) = (scene.height, scene.width);
    let mut video = Array4::<f64>::zeros((frames, h, w, 3));
    let mut state = scene.clone();
    for f in 0..frames {
        let frame = render_scene(&state);
        video
            .index_axis_mut(ndarray::Axis(0), f)
            .assign(&frame.index_axis(ndarray::Axis(0), 0));
        state = advance_scene(&state);
    }
    video
}

/// Ground-truth foreground mask of one shape in the scene's current state:
/// majority-covered pixels not occluded by a later-painted shape.
pub fn ground_truth_mask(scene: &SceneDescriptor, shape_idx: usize) -> BinaryMask {
    let (h, w) = (scene.height, scene.width);
    let mut mask = BinaryMask::new_empty(h, w);
    for i in 0..h {
        for j in 0..w {
            let (py, px) = (i as f64 + 0.5, j as f64 + 0.5);
            let own = coverage(&scene.shapes[shape_idx], py, px) >= 0.5;
            let occluded = scene.shapes[shape_idx + 1..]
                .iter()
                .any(|s| coverage(s, py, px) >= 0.5);
            mask.set(i, j, own && !occluded);
        }
    }
    mask
}

// =========================================================================
// Captions
// =========================================================================

/// Direction word for a velocity, coarsened to the 8 compass directions
/// (row axis points down).
pub fn direction_word(velocity: (f64, f64)) -> &'static str {
    let (vr, vc) = velocity;
    if vr.abs() < 1e-9 && vc.abs() < 1e-9 {
        return "in place";
    }
    let vertical = vr.abs() >= 2.0 * vc.abs();
    let horizontal = vc.abs() >= 2.0 * vr.abs();
    match (vertical, horizontal, vr > 0.0, vc > 0.0) {
        (true, _, true, _) => "down",
        (true, _, false, _) => "up",
        (_, true, _, true) => "right",
        (_, true, _, false) => "left",
        (_, _, true, true) => "down and right",
        (_, _, true, false) => "down and left",
        (_, _, false, true) => "up and right",
        (_, _, false, false) => "up and left",
    }
}

/// Deterministic caption template over the scene descriptor.
pub fn caption_for(scene: &SceneDescriptor) -> String {
    let parts: Vec<String> = scene
        .shapes
        .iter()
        .map(|s| {
            format!(
                "a {} {} moving {}",
                s.color.name,
                s.kind.name(),
                direction_word(s.velocity)
            )
        })
        .collect();
    format!(
        "{} on a {} background",
        parts.join(" and "),
        scene.background_name
    )
}

// =========================================================================
// Dataset generation
// =========================================================================

/// Generate `n` seeded samples of `frames` frames at `height × width`.
pub fn synth_dataset(
    n: usize,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if frames == 0 {
        return Err(Error::ContractViolation("need at least one frame".into()));
    }
    let min_side = height.min(width);
    if min_side < 8 {
        return Err(Error::ContractViolation(format!(
            "frame {height}x{width} too small for shape placement"
        )));
    }
    (0..n)
        .map(|i| {
            let mut rng = rng_from(mix2(seed, 0x7363_656e, i as u64));
            let scene = sample_scene(&mut rng, height, width);
            let caption = caption_for(&scene);
            let video = render_video(&scene, frames);
            Ok(SyntheticSample {
                video,
                caption,
                scene,
            })
        })
        .collect()
}

fn sample_scene<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> SceneDescriptor {
    let min_side = height.min(width) as f64;
    let (background_name, background) = *BACKGROUNDS.choose(rng).expect("non-empty");
    let count = if rng.random_bool(0.35) { 2 } else { 1 };

    let mut color_pool: Vec<PaletteColor> = SHAPE_COLORS.to_vec();
    let mut shapes: Vec<ShapeSpec> = Vec::with_capacity(count);
    for _ in 0..count {
        let color_idx = rng.random_range(0..color_pool.len());
        let color = color_pool.swap_remove(color_idx); // distinct colors per scene
        let kind = *ShapeClass::ALL.choose(rng).expect("non-empty");
        let radius = rng.random_range(0.15..0.28) * min_side;
        let place = |rng: &mut R, extent: usize| -> f64 {
            rng.random_range(radius + 1.0..extent as f64 - radius - 1.0)
        };
        let mut center = (place(rng, height), place(rng, width));
        // Keep two shapes from starting on top of each other.
        for _ in 0..20 {
            let clear = shapes.iter().all(|s| {
                let d = ((center.0 - s.center.0).powi(2) + (center.1 - s.center.1).powi(2)).sqrt();
                d >= radius + s.radius + 1.0
            });
            if clear {
                break;
            }
            center = (place(rng, height), place(rng, width));
        }
        let speed = rng.random_range(0.03..0.10) * min_side;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        shapes.push(ShapeSpec {
            kind,
            color,
            center,
            radius,
            velocity: (speed * angle.sin(), speed * angle.cos()),
        });
    }
    SceneDescriptor {
        height,
        width,
        background_name,
        background,
        shapes,
    }
}

// =========================================================================
// Disk format
// =========================================================================

/// Write samples as `sample_{i:04}/` video directories (frames + metadata).
pub fn save_dataset(dir: &Path, samples: &[SyntheticSample], fps: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, sample) in samples.iter().enumerate() {
        let (frames, h, w, _) = sample.video.dim();
        let meta = VideoMeta {
            frames,
            height: h,
            width: w,
            fps,
            caption: sample.caption.clone(),
        };
        save_video_dir(&dir.join(format!("sample_{i:04}")), &sample.video, &meta)?;
    }
    Ok(())
}

/// Load every `sample_*` subdirectory, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("sample_"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::IncompatibleFile(format!(
            "{}: no sample_* directories",
            dir.display()
        )));
    }
    names
        .into_iter()
        .map(|name| {
            let (video, meta) = load_video_dir(&dir.join(name))?;
            Ok(DatasetItem {
                video,
                caption: meta.caption,
            })
        })
        .collect()
}
