//! Reference-conditioned toy video generation, end to end on a desk scale.
//!
//! The crate covers the full loop: procedural binary masks with exact pixel
//! counts ([`mask`]), affine augmentation of masked reference frames
//! ([`augment`]), an invertible mock video/text codec ([`codec`]), assembly of
//! the conditioned latent input and the reference-aware attention mask
//! ([`conditioning`]), a small flow-matching transformer with hand-checked
//! gradients ([`model`], [`autodiff`]), a synthetic moving-shapes dataset
//! ([`dataset`]), the training loop ([`trainer`]), and zero-shot sampling from
//! user reference images ([`inference`]).
//!
//! Everything is deterministic given explicit seeds, and every numerical
//! component has an independent oracle in the test suite.

pub mod augment;
pub mod autodiff;
pub mod codec;
pub mod conditioning;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod mask;
pub mod model;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
