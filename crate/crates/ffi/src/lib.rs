//! C ABI for the exact-area mask generator.
//!
//! The surface is deliberately narrow: an opaque generator handle carrying
//! the configuration (size, shape kinds, ratio policy), one call that
//! renders a mask into a caller-owned byte buffer, and integer error codes
//! with a retrievable per-thread error message. All functions are
//! panic-safe: a Rust panic is caught at the boundary and reported as
//! [`RV_ERR_PANIC`] instead of unwinding into C.
//!
//! Buffer convention: masks are written row-major, one byte per pixel,
//! `0` background / `1` foreground.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::Rng;
use refvid_core::mask::{generate_mask, MaskSpec, RatioMixture, ShapeKind};
use refvid_core::seeds::rng_from;
use refvid_core::Error as CoreError;

// =========================================================================
// Error codes
// =========================================================================

/// Success.
pub const RV_OK: i32 = 0;
/// A required pointer argument was null.
pub const RV_ERR_NULL: i32 = -1;
/// A configuration value was rejected (range or enum violation).
pub const RV_ERR_INVALID_CONFIG: i32 = -2;
/// The requested geometry cannot produce a valid mask.
pub const RV_ERR_UNSATISFIABLE: i32 = -3;
/// Mask synthesis failed to converge for this seed.
pub const RV_ERR_GENERATION: i32 = -4;
/// The caller-provided buffer is too small.
pub const RV_ERR_BUFFER: i32 = -5;
/// An internal panic was caught at the boundary.
pub const RV_ERR_PANIC: i32 = -6;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let stored = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("invalid error text").expect("static text"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::InvalidConfig(_) => RV_ERR_INVALID_CONFIG,
        CoreError::UnsatisfiableShape(_) => RV_ERR_UNSATISFIABLE,
        CoreError::GenerationFailure { .. } => RV_ERR_GENERATION,
        _ => RV_ERR_PANIC,
    }
}

/// Wrap a boundary body with panic catching and error-message plumbing.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-text payload".into());
            set_error(format!("internal panic: {text}"));
            RV_ERR_PANIC
        }
    }
}

// =========================================================================
// The opaque generator handle
// =========================================================================

/// Ratio policy: a pinned exact ratio or the training mixture.
enum RatioPolicy {
    Fixed(f64),
    Mixture(RatioMixture),
}

/// Opaque mask-generator configuration. C sees only the pointer.
pub struct RvMaskGen {
    height: u32,
    width: u32,
    kinds: Vec<ShapeKind>,
    ratio: RatioPolicy,
}

/// Shape-kind codes for `rv_maskgen_set_kinds`.
pub const RV_SHAPE_ELLIPSE: i32 = 0;
/// Fourier-perturbed blob outline.
pub const RV_SHAPE_FOURIER: i32 = 1;
/// Random convex polygon.
pub const RV_SHAPE_CONVEX: i32 = 2;
/// Random star-shaped (concave) polygon.
pub const RV_SHAPE_CONCAVE: i32 = 3;

fn kind_from_code(code: i32) -> Option<ShapeKind> {
    match code {
        RV_SHAPE_ELLIPSE => Some(ShapeKind::Ellipse),
        RV_SHAPE_FOURIER => Some(ShapeKind::FourierBlob),
        RV_SHAPE_CONVEX => Some(ShapeKind::ConvexPolygon),
        RV_SHAPE_CONCAVE => Some(ShapeKind::ConcavePolygon),
        _ => None,
    }
}

// =========================================================================
// Exported functions
// =========================================================================

/// Library version as a static, nul-terminated string; never freed.
#[no_mangle]
pub extern "C" fn rv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Detail text of the most recent error on this thread, or null when no
/// error has occurred. The pointer stays valid until the next failing call
/// on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn rv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |text| text.as_ptr())
    })
}

/// Create a generator for `height x width` masks, drawing uniformly from
/// all shape kinds with the training ratio mixture. Returns null when the
/// size is rejected. Free with [`rv_maskgen_free`].
#[no_mangle]
pub extern "C" fn rv_maskgen_new(height: u32, width: u32) -> *mut RvMaskGen {
    let mut out: *mut RvMaskGen = std::ptr::null_mut();
    guarded(|| {
        // Probe the size through the real validator so null is returned for
        // exactly the sizes generation would later reject.
        if let Err(err) = MaskSpec::new(ShapeKind::Ellipse, height as usize, width as usize, 0.3, 0)
        {
            set_error(err.to_string());
            return code_for(&err);
        }
        out = Box::into_raw(Box::new(RvMaskGen {
            height,
            width,
            kinds: ShapeKind::ALL.to_vec(),
            ratio: RatioPolicy::Mixture(RatioMixture::training_default()),
        }));
        RV_OK
    });
    out
}

/// Destroy a generator; null is accepted and ignored.
#[no_mangle]
pub extern "C" fn rv_maskgen_free(gen: *mut RvMaskGen) {
    if !gen.is_null() {
        // SAFETY: the pointer came from `rv_maskgen_new` and is dropped
        // exactly once by contract.
        drop(unsafe { Box::from_raw(gen) });
    }
}

/// Pin every generated mask to one exact foreground ratio in [0, 1].
#[no_mangle]
pub extern "C" fn rv_maskgen_set_ratio(gen: *mut RvMaskGen, ratio: f64) -> i32 {
    guarded(|| {
        let Some(gen) = (unsafe { gen.as_mut() }) else {
            set_error("null generator handle".into());
            return RV_ERR_NULL;
        };
        // Validate through the real constructor so diagnostics match.
        if let Err(err) = MaskSpec::new(
            ShapeKind::Ellipse,
            gen.height as usize,
            gen.width as usize,
            ratio,
            0,
        ) {
            set_error(err.to_string());
            return code_for(&err);
        }
        gen.ratio = RatioPolicy::Fixed(ratio);
        RV_OK
    })
}

/// Return to drawing ratios from the training mixture.
#[no_mangle]
pub extern "C" fn rv_maskgen_use_mixture(gen: *mut RvMaskGen) -> i32 {
    guarded(|| {
        let Some(gen) = (unsafe { gen.as_mut() }) else {
            set_error("null generator handle".into());
            return RV_ERR_NULL;
        };
        gen.ratio = RatioPolicy::Mixture(RatioMixture::training_default());
        RV_OK
    })
}

/// Restrict the shape families drawn from; `kinds` is an array of `n`
/// `RV_SHAPE_*` codes.
#[no_mangle]
pub extern "C" fn rv_maskgen_set_kinds(gen: *mut RvMaskGen, kinds: *const i32, n: usize) -> i32 {
    guarded(|| {
        let Some(gen) = (unsafe { gen.as_mut() }) else {
            set_error("null generator handle".into());
            return RV_ERR_NULL;
        };
        if kinds.is_null() {
            set_error("null kinds array".into());
            return RV_ERR_NULL;
        }
        if n == 0 {
            set_error("empty kind set".into());
            return RV_ERR_INVALID_CONFIG;
        }
        // SAFETY: caller guarantees `kinds` points to `n` readable i32s.
        let codes = unsafe { std::slice::from_raw_parts(kinds, n) };
        let mut parsed = Vec::with_capacity(n);
        for &code in codes {
            match kind_from_code(code) {
                Some(kind) => parsed.push(kind),
                None => {
                    set_error(format!("unknown shape code {code}"));
                    return RV_ERR_INVALID_CONFIG;
                }
            }
        }
        gen.kinds = parsed;
        RV_OK
    })
}

/// Generate one mask into `out` (row-major, one byte per pixel, 0 or 1).
/// `out_len` must be at least `height * width`. Identical `(handle
/// configuration, seed)` pairs produce identical bytes. On success the
/// exact foreground pixel count is written to `out_count` when it is
/// non-null.
#[no_mangle]
pub extern "C" fn rv_maskgen_generate(
    gen: *const RvMaskGen,
    seed: u64,
    out: *mut u8,
    out_len: usize,
    out_count: *mut u64,
) -> i32 {
    guarded(|| {
        let Some(gen) = (unsafe { gen.as_ref() }) else {
            set_error("null generator handle".into());
            return RV_ERR_NULL;
        };
        if out.is_null() {
            set_error("null output buffer".into());
            return RV_ERR_NULL;
        }
        let needed = gen.height as usize * gen.width as usize;
        if out_len < needed {
            set_error(format!("buffer holds {out_len} bytes, mask needs {needed}"));
            return RV_ERR_BUFFER;
        }

        let mut rng = rng_from(seed);
        let mut last_code = RV_ERR_GENERATION;
        for _ in 0..16 {
            let ratio = match &gen.ratio {
                RatioPolicy::Fixed(r) => *r,
                RatioPolicy::Mixture(m) => m.sample(&mut rng),
            };
            let kind = gen.kinds[rng.random_range(0..gen.kinds.len())];
            let mask_seed: u64 = rng.random();
            let spec = match MaskSpec::new(
                kind,
                gen.height as usize,
                gen.width as usize,
                ratio,
                mask_seed,
            ) {
                Ok(spec) => spec,
                Err(err) => {
                    set_error(err.to_string());
                    return code_for(&err);
                }
            };
            match generate_mask(&spec) {
                Ok(mask) => {
                    // SAFETY: bounds were checked against `out_len` above.
                    let buffer = unsafe { std::slice::from_raw_parts_mut(out, needed) };
                    for r in 0..gen.height as usize {
                        for c in 0..gen.width as usize {
                            buffer[r * gen.width as usize + c] = u8::from(mask.get(r, c));
                        }
                    }
                    if !out_count.is_null() {
                        // SAFETY: non-null out_count points to a writable u64.
                        unsafe { *out_count = mask.foreground_count() as u64 };
                    }
                    return RV_OK;
                }
                Err(err) => {
                    set_error(err.to_string());
                    last_code = code_for(&err);
                }
            }
        }
        last_code
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    fn last_error() -> String {
        let ptr = rv_last_error_message();
        assert!(!ptr.is_null(), "expected an error message");
        unsafe { CStr::from_ptr(ptr) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn version_is_a_nul_terminated_semver() {
        let ptr = rv_version();
        assert!(!ptr.is_null());
        let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(text.split('.').count(), 3);
    }

    #[test]
    fn generation_is_exact_deterministic_and_binary() {
        let gen = rv_maskgen_new(32, 32);
        assert!(!gen.is_null());
        assert_eq!(rv_maskgen_set_ratio(gen, 0.3), RV_OK);
        let mut a = vec![0u8; 32 * 32];
        let mut b = vec![0u8; 32 * 32];
        let mut count = 0u64;
        assert_eq!(
            rv_maskgen_generate(gen, 9, a.as_mut_ptr(), a.len(), &mut count),
            RV_OK
        );
        assert_eq!(
            rv_maskgen_generate(gen, 9, b.as_mut_ptr(), b.len(), std::ptr::null_mut()),
            RV_OK
        );
        assert_eq!(a, b, "same seed must give identical bytes");
        assert!(a.iter().all(|&v| v <= 1), "mask bytes must be 0/1");
        let fg = a.iter().filter(|&&v| v == 1).count() as u64;
        assert_eq!(fg, count);
        assert_eq!(count, (0.3f64 * 1024.0).round() as u64);
        let mut c = vec![0u8; 32 * 32];
        assert_eq!(
            rv_maskgen_generate(gen, 10, c.as_mut_ptr(), c.len(), std::ptr::null_mut()),
            RV_OK
        );
        assert_ne!(a, c, "different seeds should differ");
        rv_maskgen_free(gen);
    }

    #[test]
    fn rejected_ratios_report_a_range_diagnostic() {
        let gen = rv_maskgen_new(16, 16);
        assert_eq!(rv_maskgen_set_ratio(gen, 1.5), RV_ERR_INVALID_CONFIG);
        assert!(last_error().contains("1.5"));
        rv_maskgen_free(gen);
    }

    #[test]
    fn kind_restriction_accepts_codes_and_rejects_garbage() {
        let gen = rv_maskgen_new(24, 24);
        let codes = [RV_SHAPE_ELLIPSE, RV_SHAPE_CONVEX];
        assert_eq!(rv_maskgen_set_kinds(gen, codes.as_ptr(), 2), RV_OK);
        let bad = [7];
        assert_eq!(
            rv_maskgen_set_kinds(gen, bad.as_ptr(), 1),
            RV_ERR_INVALID_CONFIG
        );
        assert_eq!(
            rv_maskgen_set_kinds(gen, codes.as_ptr(), 0),
            RV_ERR_INVALID_CONFIG
        );
        let mut buf = vec![0u8; 24 * 24];
        assert_eq!(
            rv_maskgen_generate(gen, 3, buf.as_mut_ptr(), buf.len(), std::ptr::null_mut()),
            RV_OK
        );
        rv_maskgen_free(gen);
    }

    #[test]
    fn null_and_short_buffers_are_rejected() {
        assert_eq!(rv_maskgen_set_ratio(std::ptr::null_mut(), 0.5), RV_ERR_NULL);
        let gen = rv_maskgen_new(16, 16);
        let mut buf = vec![0u8; 16 * 16];
        assert_eq!(
            rv_maskgen_generate(std::ptr::null(), 1, buf.as_mut_ptr(), buf.len(), std::ptr::null_mut()),
            RV_ERR_NULL
        );
        assert_eq!(
            rv_maskgen_generate(gen, 1, std::ptr::null_mut(), 0, std::ptr::null_mut()),
            RV_ERR_NULL
        );
        assert_eq!(
            rv_maskgen_generate(gen, 1, buf.as_mut_ptr(), 10, std::ptr::null_mut()),
            RV_ERR_BUFFER
        );
        assert!(last_error().contains("10"));
        rv_maskgen_free(gen);
        rv_maskgen_free(std::ptr::null_mut());
    }

    #[test]
    fn undersized_frames_return_null_handles() {
        let gen = rv_maskgen_new(2, 2);
        assert!(gen.is_null());
        assert!(!rv_last_error_message().is_null());
    }
}
