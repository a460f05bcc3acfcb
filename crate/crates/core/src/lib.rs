//! Rotated-object detection with teacher-student distillation.
//!
//! The crate bundles exact rotated-box geometry, the detection and
//! distillation losses with analytic gradients, anchor generation and
//! assignment, a small hand-differentiated detector trainable on
//! synthetic scenes, DOTA-format ingestion and tiling, and rotated
//! mean-average-precision evaluation.

pub mod anchors;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod orchestrate;
pub mod toynet;

pub use error::{Error, Result};
