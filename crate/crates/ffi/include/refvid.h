#ifndef REFVID_H
#define REFVID_H

/* Generated from the Rust source; edit src/lib.rs, not this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define RV_OK 0

// A required pointer argument was null.
#define RV_ERR_NULL -1

// A configuration value was rejected (range or enum violation).
#define RV_ERR_INVALID_CONFIG -2

// The requested geometry cannot produce a valid mask.
#define RV_ERR_UNSATISFIABLE -3

// Mask synthesis failed to converge for this seed.
#define RV_ERR_GENERATION -4

// The caller-provided buffer is too small.
#define RV_ERR_BUFFER -5

// An internal panic was caught at the boundary.
#define RV_ERR_PANIC -6

// Shape-kind codes for `rv_maskgen_set_kinds`.
#define RV_SHAPE_ELLIPSE 0

// Fourier-perturbed blob outline.
#define RV_SHAPE_FOURIER 1

// Random convex polygon.
#define RV_SHAPE_CONVEX 2

// Random star-shaped (concave) polygon.
#define RV_SHAPE_CONCAVE 3

// Opaque mask-generator configuration. C sees only the pointer.
typedef struct RvMaskGen RvMaskGen;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static, nul-terminated string; never freed.
const char *rv_version(void);

// Detail text of the most recent error on this thread, or null when no
// error has occurred. The pointer stays valid until the next failing call
// on the same thread; do not free it.
const char *rv_last_error_message(void);

// Create a generator for `height x width` masks, drawing uniformly from
// all shape kinds with the training ratio mixture. Returns null when the
// size is rejected. Free with [`rv_maskgen_free`].
struct RvMaskGen *rv_maskgen_new(uint32_t height, uint32_t width);

// Destroy a generator; null is accepted and ignored.
void rv_maskgen_free(struct RvMaskGen *gen);

// Pin every generated mask to one exact foreground ratio in [0, 1].
int32_t rv_maskgen_set_ratio(struct RvMaskGen *gen, double ratio);

// Return to drawing ratios from the training mixture.
int32_t rv_maskgen_use_mixture(struct RvMaskGen *gen);

// Restrict the shape families drawn from; `kinds` is an array of `n`
// `RV_SHAPE_*` codes.
int32_t rv_maskgen_set_kinds(struct RvMaskGen *gen, const int32_t *kinds, size_t n);

// Generate one mask into `out` (row-major, one byte per pixel, 0 or 1).
// `out_len` must be at least `height * width`. Identical `(handle
// configuration, seed)` pairs produce identical bytes. On success the
// exact foreground pixel count is written to `out_count` when it is
// non-null.
int32_t rv_maskgen_generate(const struct RvMaskGen *gen,
                            uint64_t seed,
                            uint8_t *out,
                            size_t out_len,
                            uint64_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REFVID_H */
