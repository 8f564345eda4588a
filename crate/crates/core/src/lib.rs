//! Self-supervised depth losses and an edge-fattening testbed.
//!
//! The crate bundles the photometric reprojection loss, a patch-based triplet
//! loss over depth features (with hardest-negative mining and an isolated
//! positive/negative form), a procedural stereo renderer with exact ground
//! truth, a direct per-pixel disparity optimizer and the standard depth
//! evaluation metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod photometric;
pub mod synth;
pub mod triplet;

pub use error::{Error, Result};
pub use grid::{CoordGrid, LabelGrid, ScalarGrid, VectorGrid};
