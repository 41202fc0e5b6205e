//! Procedural binary mask generation with exact foreground areas.
//!
//! The pipeline: sample a target area ratio from a bucketed mixture, sample a
//! shape (a star-shaped radial profile) and a center, find by bisection the
//! scale whose rasterization lands closest to the target pixel count, then
//! nudge the count to the exact target by flipping individual boundary
//! pixels while preserving 8-connectivity.
//!
//! A pixel belongs to a shape at scale `s` when its center lies inside the
//! scaled profile. Equivalently each pixel has an entry scale
//! `t = |p - center| / rho(phi(p))`, and the mask at scale `s` is
//! `{ t <= s }` — which makes the area trivially non-decreasing in `s` and
//! lets the bisection detect any violation as an internal error.

mod shape;
pub mod topology;

pub use shape::{ShapeKind, ShapeParams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds::rng_from;

// =========================================================================
// Binary mask
// =========================================================================

/// A dense 0/1 mask, row-major, with a maintained foreground count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    foreground: usize,
}

impl BinaryMask {
    pub fn new_empty(height: usize, width: usize) -> BinaryMask {
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
            foreground: 0,
        }
    }

    /// Build from raw row-major bytes; any non-zero byte is foreground.
    pub fn from_data(height: usize, width: usize, data: &[u8]) -> Result<BinaryMask> {
        if data.len() != height * width {
            return Err(Error::ContractViolation(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        let data: Vec<u8> = data.iter().map(|&b| u8::from(b != 0)).collect();
        let foreground = data.iter().filter(|&&b| b != 0).count();
        Ok(BinaryMask {
            height,
            width,
            data,
            foreground,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        let cell = &mut self.data[r * self.width + c];
        let old = *cell != 0;
        if old != value {
            *cell = u8::from(value);
            if value {
                self.foreground += 1;
            } else {
                self.foreground -= 1;
            }
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Mean (row, col) of the foreground pixels, or `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.foreground == 0 {
            return None;
        }
        let (mut sr, mut sc) = (0.0, 0.0);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    sr += r as f64;
                    sc += c as f64;
                }
            }
        }
        let n = self.foreground as f64;
        Some((sr / n, sc / n))
    }

    /// True when the foreground is empty or forms one 8-connected component.
    pub fn is_connected(&self) -> bool {
        self.foreground == 0 || topology::component_count(self) == 1
    }
}

// =========================================================================
// Area-ratio mixture
// =========================================================================

/// One bucket of the area-ratio mixture: picked with `probability`, then the
/// ratio is drawn uniformly from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBucket {
    pub probability: f64,
    pub lo: f64,
    pub hi: f64,
}

/// A bucketed mixture over foreground/frame area ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMixture {
    buckets: Vec<RatioBucket>,
}

impl RatioMixture {
    pub fn new(buckets: Vec<RatioBucket>) -> Result<RatioMixture> {
        if buckets.is_empty() {
            return Err(Error::InvalidConfig("ratio mixture has no buckets".into()));
        }
        let mut total = 0.0;
        for b in &buckets {
            if !(b.probability >= 0.0) || !b.probability.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "bucket probability {} is not a finite non-negative number",
                    b.probability
                )));
            }
            if !(0.0 <= b.lo && b.lo <= b.hi && b.hi <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "bucket range [{}, {}] is not inside [0, 1]",
                    b.lo, b.hi
                )));
            }
            total += b.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "bucket probabilities sum to {total}, expected 1"
            )));
        }
        Ok(RatioMixture { buckets })
    }

    /// The training default: mostly mid-sized masks, with small tails of
    /// tiny and near-full ones.
    pub fn training_default() -> RatioMixture {
        RatioMixture::new(vec![
            RatioBucket {
                probability: 0.10,
                lo: 0.0,
                hi: 0.1,
            },
            RatioBucket {
                probability: 0.80,
                lo: 0.1,
                hi: 0.5,
            },
            RatioBucket {
                probability: 0.10,
                lo: 0.5,
                hi: 1.0,
            },
        ])
        .expect("default mixture is valid")
    }

    pub fn buckets(&self) -> &[RatioBucket] {
        &self.buckets
    }

    /// Draw a ratio: pick a bucket by probability, then uniform within it.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.buckets.len() - 1;
        for (i, b) in self.buckets.iter().enumerate() {
            acc += b.probability;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let b = self.buckets[chosen];
        b.lo + rng.random::<f64>() * (b.hi - b.lo)
    }

    /// Index of the bucket containing `ratio` (first match wins).
    pub fn bucket_of(&self, ratio: f64) -> Option<usize> {
        self.buckets
            .iter()
            .position(|b| b.lo <= ratio && ratio <= b.hi)
    }
}

// =========================================================================
// Mask generation
// =========================================================================

/// Maximum number of (center, shape) resamples before giving up.
pub const GENERATION_ATTEMPTS: u32 = 8;

/// Largest |count - target| gap (as a fraction of the frame) the pixel-level
/// adjustment will accept; the bisection virtually always lands far closer.
pub const MAX_ADJUST_GAP_FRACTION: f64 = 0.05;

/// Everything needed to generate one mask deterministically.
#[derive(Debug, Clone)]
pub struct MaskSpec {
    pub kind: ShapeKind,
    pub height: usize,
    pub width: usize,
    pub target_ratio: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(
        kind: ShapeKind,
        height: usize,
        width: usize,
        target_ratio: f64,
        seed: u64,
    ) -> Result<MaskSpec> {
        if !(8..=4096).contains(&height) || !(8..=4096).contains(&width) {
            return Err(Error::InvalidConfig(format!(
                "mask size {height}x{width} outside [8, 4096]"
            )));
        }
        if !target_ratio.is_finite() || !(0.0..=1.0).contains(&target_ratio) {
            return Err(Error::InvalidConfig(format!(
                "target ratio {target_ratio} outside [0, 1]"
            )));
        }
        Ok(MaskSpec {
            kind,
            height,
            width,
            target_ratio,
            seed,
        })
    }

    /// The exact foreground pixel count the generated mask will have.
    pub fn target_count(&self) -> usize {
        (self.target_ratio * (self.height * self.width) as f64).round() as usize
    }
}

/// Per-pixel entry scales for one (shape, center) pair: pixel `(r, c)` is
/// foreground at scale `s` exactly when `t[r * w + c] <= s`.
struct RadialField {
    t: Vec<f64>,
    height: usize,
    width: usize,
}

impl RadialField {
    fn build(params: &ShapeParams, center: (f64, f64), height: usize, width: usize) -> RadialField {
        let mut t = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let dr = r as f64 - center.0;
                let dc = c as f64 - center.1;
                let dist = dr.hypot(dc);
                if dist == 0.0 {
                    t.push(0.0);
                } else {
                    let phi = dr.atan2(dc);
                    t.push(dist / params.radius_at(phi));
                }
            }
        }
        RadialField { t, height, width }
    }

    fn count_at(&self, scale: f64) -> usize {
        self.t.iter().filter(|&&t| t <= scale).count()
    }

    fn mask_at(&self, scale: f64) -> BinaryMask {
        let mut m = BinaryMask::new_empty(self.height, self.width);
        for (i, &t) in self.t.iter().enumerate() {
            if t <= scale {
                m.set(i / self.width, i % self.width, true);
            }
        }
        m
    }

    fn max_t(&self) -> f64 {
        self.t.iter().cloned().fold(0.0, f64::max)
    }
}

/// Rasterize a shape at a fixed scale: pixel centers inside the scaled
/// profile become foreground. `center` is in (row, col) pixel coordinates.
pub fn raster_shape(
    params: &ShapeParams,
    center: (f64, f64),
    scale: f64,
    height: usize,
    width: usize,
) -> Result<BinaryMask> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidConfig(format!("raster scale {scale}")));
    }
    if !center.0.is_finite() || !center.1.is_finite() {
        return Err(Error::InvalidConfig(format!("raster center {center:?}")));
    }
    Ok(RadialField::build(params, center, height, width).mask_at(scale))
}

/// Outcome of the scale search: the chosen scale, its mask, and how many
/// search iterations were spent.
#[derive(Debug)]
pub struct BisectOutcome {
    pub scale: f64,
    pub mask: BinaryMask,
    pub iterations: u32,
}

/// Find by bisection the scale whose rasterized area is closest to
/// `target_count`, preferring exact hits (early exit), then smaller gaps,
/// then non-empty masks when the target is positive, then smaller scales.
///
/// The search runs at most 64 iterations or until the bracket's relative
/// width drops below 1e-6. Because the pixel-inclusion rule is monotone in
/// the scale, any decrease of area along the way is reported as an internal
/// error rather than silently mis-searched.
pub fn bisect_scale(
    params: &ShapeParams,
    center: (f64, f64),
    target_count: usize,
    height: usize,
    width: usize,
) -> Result<BisectOutcome> {
    const MAX_ITERS: u32 = 64;
    const REL_WIDTH: f64 = 1e-6;

    let field = RadialField::build(params, center, height, width);
    let total = height * width;
    let target = target_count.min(total);

    // Candidate scales seen so far, with their areas.
    let mut seen: Vec<(f64, usize)> = Vec::with_capacity(MAX_ITERS as usize + 2);
    let mut lo = 0.0f64;
    let mut hi = field.max_t() + 1.0;
    let mut count_lo = field.count_at(lo);
    let mut count_hi = total; // everything is included at hi by construction
    seen.push((lo, count_lo));
    seen.push((hi, count_hi));

    let mut iterations = 0;
    let exact = |seen: &[(f64, usize)]| {
        seen.iter()
            .filter(|&&(_, n)| n == target)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .copied()
    };

    if exact(&seen).is_none() {
        while iterations < MAX_ITERS && (hi - lo) > REL_WIDTH * hi.max(1e-12) {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let count_mid = field.count_at(mid);
            if count_mid < count_lo || count_mid > count_hi {
                return Err(Error::MonotonicityViolation {
                    scale_lo: lo,
                    scale_hi: hi,
                    area_lo: count_lo,
                    area_hi: count_hi,
                });
            }
            seen.push((mid, count_mid));
            if count_mid == target {
                break;
            }
            if count_mid < target {
                lo = mid;
                count_lo = count_mid;
            } else {
                hi = mid;
                count_hi = count_mid;
            }
        }
    }

    let (scale, _count) = exact(&seen).unwrap_or_else(|| {
        // No exact hit is achievable; take the closest area, penalizing the
        // empty mask when something was asked for, breaking ties toward the
        // smaller scale.
        *seen
            .iter()
            .min_by(|a, b| {
                let penalty = |&(_, n): &(f64, usize)| {
                    let gap = (n as i64 - target as i64).unsigned_abs();
                    gap + if n == 0 && target > 0 {
                        (total + 1) as u64
                    } else {
                        0
                    }
                };
                penalty(a).cmp(&penalty(b)).then(a.0.total_cmp(&b.0))
            })
            .expect("seen is non-empty")
    });

    Ok(BisectOutcome {
        scale,
        mask: field.mask_at(scale),
        iterations,
    })
}

/// Flip individual pixels until the mask has exactly `target_count`
/// foreground pixels, preserving 8-connectivity throughout.
///
/// Growth flips background pixels that touch the foreground; shrinkage flips
/// boundary pixels that pass a simple-point test (with a slower flood-fill
/// fallback for the rare configurations the local test cannot certify).
/// Requires the starting gap to be at most 5% of the frame area.
pub fn adjust_area(
    mask: &BinaryMask,
    target_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    let total = h * w;
    let gap = (mask.foreground_count() as i64 - target_count as i64).unsigned_abs();
    if gap as f64 > MAX_ADJUST_GAP_FRACTION * total as f64 {
        return Err(Error::ContractViolation(format!(
            "adjustment gap {gap} exceeds {}% of the frame",
            MAX_ADJUST_GAP_FRACTION * 100.0
        )));
    }
    if target_count > total {
        return Err(Error::ContractViolation(format!(
            "target count {target_count} exceeds frame area {total}"
        )));
    }

    let mut m = mask.clone();

    while m.foreground_count() < target_count {
        // Grow: any background pixel 8-adjacent to the foreground keeps the
        // mask connected when flipped on.
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !m.get(r, c) && has_fg_neighbor(&m, r, c) {
                    candidates.push((r, c));
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::AdjustmentFailure(format!(
                "no growth candidates at count {} (target {target_count})",
                m.foreground_count()
            )));
        }
        let (r, c) = candidates[rng.random_range(0..candidates.len())];
        m.set(r, c, true);
    }

    while m.foreground_count() > target_count {
        if m.foreground_count() == 1 {
            // target_count is 0 here; removing the last pixel is fine.
            let (r, c) = first_foreground(&m).expect("count is 1");
            m.set(r, c, false);
            continue;
        }
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        let mut simple: Vec<(usize, usize)> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if m.get(r, c) && topology::is_boundary(&m, r, c) {
                    boundary.push((r, c));
                    if topology::is_simple(&m, r, c) {
                        simple.push((r, c));
                    }
                }
            }
        }
        if let Some(&(r, c)) = pick(&simple, rng) {
            m.set(r, c, false);
            continue;
        }
        // The local test certified nothing (e.g. a one-pixel-wide loop).
        // Fall back to trying boundary pixels in random order with a full
        // connectivity check.
        let mut order = boundary;
        shuffle(&mut order, rng);
        let mut flipped = false;
        for (r, c) in order {
            m.set(r, c, false);
            if m.is_connected() {
                flipped = true;
                break;
            }
            m.set(r, c, true);
        }
        if !flipped {
            return Err(Error::AdjustmentFailure(format!(
                "no removable pixel at count {} (target {target_count})",
                m.foreground_count()
            )));
        }
    }

    Ok(m)
}

fn has_fg_neighbor(m: &BinaryMask, r: usize, c: usize) -> bool {
    let (h, w) = (m.height() as i64, m.width() as i64);
    topology::NEIGHBORS_8.iter().any(|&(dr, dc)| {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        nr >= 0 && nc >= 0 && nr < h && nc < w && m.get(nr as usize, nc as usize)
    })
}

fn first_foreground(m: &BinaryMask) -> Option<(usize, usize)> {
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) {
                return Some((r, c));
            }
        }
    }
    None
}

fn pick<'a, T>(items: &'a [T], rng: &mut ChaCha8Rng) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[rng.random_range(0..items.len())])
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.random_range(0..=i));
    }
}

/// Generate one mask with an exact foreground count: sample center and shape
/// parameters from the spec's seed, bisect the scale, then adjust pixel by
/// pixel. Shapes that rasterize disconnected (possible for very thin shapes
/// at small scales) or fail adjustment are resampled, up to
/// [`GENERATION_ATTEMPTS`] times.
///
/// A zero target ratio yields the empty mask.
pub fn generate_mask(spec: &MaskSpec) -> Result<BinaryMask> {
    let target = spec.target_count();
    let (h, w) = (spec.height, spec.width);
    if target == 0 {
        return Ok(BinaryMask::new_empty(h, w));
    }

    let mut rng = rng_from(spec.seed);
    let margin = 0.1 * h.min(w) as f64;
    let max_gap = MAX_ADJUST_GAP_FRACTION * (h * w) as f64;

    for _ in 0..GENERATION_ATTEMPTS {
        let center = (
            rng.random_range(margin..=(h - 1) as f64 - margin),
            rng.random_range(margin..=(w - 1) as f64 - margin),
        );
        let params = ShapeParams::sample(spec.kind, &mut rng);
        let outcome = bisect_scale(&params, center, target, h, w)?;
        let gap = (outcome.mask.foreground_count() as i64 - target as i64).unsigned_abs();
        if gap as f64 > max_gap || !outcome.mask.is_connected() {
            continue;
        }
        match adjust_area(&outcome.mask, target, &mut rng) {
            Ok(m) => return Ok(m),
            Err(Error::AdjustmentFailure(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailure {
        attempts: GENERATION_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests;
