//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A sampled shape degenerated (e.g. zero radius everywhere) and cannot
    /// be rasterized.
    #[error("unsatisfiable shape: {0}")]
    UnsatisfiableShape(String),

    /// The area-vs-scale search observed a decreasing area, which the
    /// rasterization rule is supposed to make impossible.
    #[error(
        "rasterized area decreased while the scale increased \
         (scale {scale_lo} -> {scale_hi}, area {area_lo} -> {area_hi})"
    )]
    MonotonicityViolation {
        scale_lo: f64,
        scale_hi: f64,
        area_lo: usize,
        area_hi: usize,
    },

    /// Pixel-level area adjustment could not reach the target count without
    /// breaking connectivity. The caller is expected to retry with a fresh
    /// shape sample.
    #[error("area adjustment failed: {0}")]
    AdjustmentFailure(String),

    /// All retries of mask generation were exhausted.
    #[error("mask generation failed after {attempts} attempts")]
    GenerationFailure { attempts: u32 },

    /// An internal precondition on tensor shapes or counts was violated.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Chroma segmentation found no foreground pixels.
    #[error("segmentation produced an empty foreground: {0}")]
    EmptySegmentation(String),

    /// A checkpoint or latent file does not match the expected format or the
    /// configuration of the code loading it.
    #[error("incompatible file: {0}")]
    IncompatibleFile(String),

    /// Training encountered a non-finite loss and aborted.
    #[error("non-finite loss {loss} at step {step} (seed {seed})")]
    NonFiniteLoss { loss: f64, step: usize, seed: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("parse error: {0}")]
    Parse(String),
}
