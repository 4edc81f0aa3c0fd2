//! Adaptive descriptor design.
//!
//! Gradient kernel descriptors computed on tone-edited variants of each
//! image, encoded with a shared codebook, and combined through multiple
//! kernel learning. Because every editing function is a non-negative
//! combination of base curves, the edited patch kernel expands exactly into
//! cross kernels between base variants, and learning kernel weights amounts
//! to learning the editing function.

pub mod editing;
pub mod encode;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod imgio;
pub mod kdes;
pub mod mkl;

pub use error::{Error, Result};
