//! Pose refinement for a query image against a Gaussian scene: rendering,
//! Fisher-based uncertainty, simulated matching, weighted PnP and Monte
//! Carlo refinement.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod fisher;
pub mod geometry;
pub mod gridio;
pub mod matcher;
pub mod pnp;
pub mod refine;
pub mod render;
pub mod rng;
pub mod scene;

#[cfg(test)]
pub(crate) mod testutil;

pub use geometry::{CameraIntrinsics, Pose};
pub use scene::GaussianScene;
