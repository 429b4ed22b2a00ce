//! Reference rasterizer and SIMT load-balance simulator for tile-based
//! Gaussian splatting render kernels.
//!
//! The pipeline is `scene` → `preprocess` (projection and tile binning) →
//! `kernels` (functional render plus per-warp work counts) → `sim` (block
//! scheduling on a machine model). `workload` produces synthetic loads that
//! skip the geometry, and `adaptive` replays a training run that picks a
//! kernel at periodic checkpoints.

pub mod adaptive;
pub mod blend;
pub mod cli;
pub mod error;
pub mod kernels;
pub mod preprocess;
pub mod report;
pub mod scene;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
