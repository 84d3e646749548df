//! Diagonal Fisher information of the scene parameters, accumulated over
//! training views, and per-Gaussian uncertainty scores derived from it.

mod jacobian;
mod params;

pub use jacobian::{render_jacobian, PixelJacobian, PixelSubset, SparseJacobian};
pub use params::{apply_parameters, parameter_vector, ParameterLayout};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::gridio::{quantize_f32, FloatGrid, GridError};
use crate::scene::{GaussianScene, TrainingView};
use jacobian::JacobianContext;

pub const DEFAULT_LAMBDA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FisherError {
    #[error("no views to accumulate")]
    EmptyViewList,
    #[error("fisher vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("fisher vector has {got} entries but the scene has {expected} parameters")]
    IndexMapMismatch { got: usize, expected: usize },
    #[error("fisher cache error: {0}")]
    Cache(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalFisher {
    pub diag: Vec<f64>,
    pub lambda: f64,
}

/// Sum of per-view diagonals. `lambda` is the total damping carried by
/// `diag`, i.e. the sum of the contributing views' dampings.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFisher {
    pub diag: Vec<f64>,
    pub lambda: f64,
    pub view_count: usize,
}

/// `diag(JᵀJ) + λ` for one view over the selected pixels.
pub fn fisher_diag(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    lambda: f64,
    subset: &PixelSubset,
) -> DiagonalFisher {
    let ctx = JacobianContext::new(scene, pose, intrinsics);
    let rows = ctx.for_each_row(subset, |px| {
        px.entries
            .into_iter()
            .map(|(i, v)| (i, v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .collect::<Vec<_>>()
    });
    let mut diag = vec![lambda; ParameterLayout::of_scene(scene).len()];
    for row in rows {
        for px in row {
            for (i, v) in px {
                diag[i] += v;
            }
        }
    }
    DiagonalFisher { diag, lambda }
}

pub fn accumulate(views: &[DiagonalFisher]) -> Result<GlobalFisher, FisherError> {
    let first = views.first().ok_or(FisherError::EmptyViewList)?;
    let mut diag = vec![0.0; first.diag.len()];
    let mut lambda = 0.0;
    for v in views {
        if v.diag.len() != diag.len() {
            return Err(FisherError::LengthMismatch(diag.len(), v.diag.len()));
        }
        for (d, x) in diag.iter_mut().zip(&v.diag) {
            *d += x;
        }
        lambda += v.lambda;
    }
    Ok(GlobalFisher {
        diag,
        lambda,
        view_count: views.len(),
    })
}

fn per_gaussian(
    global: &GlobalFisher,
    scene: &GaussianScene,
    f: impl Fn(f64) -> f64,
) -> Result<Vec<f64>, FisherError> {
    let layout = ParameterLayout::of_scene(scene);
    if global.diag.len() != layout.len() {
        return Err(FisherError::IndexMapMismatch {
            got: global.diag.len(),
            expected: layout.len(),
        });
    }
    Ok(scene
        .gaussians()
        .iter()
        .map(|g| {
            layout
                .gaussian_indices(g.parent_anchor, g.parent_offset)
                .map(|i| f(global.diag[i]))
                .sum()
        })
        .collect())
}

/// Trace of the Fisher block each Gaussian depends on (anchor feature plus
/// its own offset).
pub fn per_gaussian_trace(global: &GlobalFisher, scene: &GaussianScene) -> Result<Vec<f64>, FisherError> {
    per_gaussian(global, scene, |d| d)
}

/// Trace of the diagonal posterior covariance over the same block, `Σ 1/F_ii`.
pub fn per_gaussian_variance(global: &GlobalFisher, scene: &GaussianScene) -> Result<Vec<f64>, FisherError> {
    per_gaussian(global, scene, |d| 1.0 / d)
}

/// Which per-Gaussian quantity is fed to the renderer's uncertainty channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GaussianScore {
    #[default]
    PosteriorVariance,
    FisherTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FisherConfig {
    pub lambda: f64,
    /// Pixel stride used on every training view; 1 uses all pixels.
    pub pixel_stride: usize,
    pub score: GaussianScore,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            pixel_stride: 2,
            score: GaussianScore::PosteriorVariance,
        }
    }
}

impl FisherConfig {
    fn subset(&self) -> PixelSubset {
        if self.pixel_stride <= 1 {
            PixelSubset::Full
        } else {
            PixelSubset::Stride(self.pixel_stride)
        }
    }
}

pub fn global_fisher(
    scene: &GaussianScene,
    views: &[TrainingView],
    config: &FisherConfig,
) -> Result<GlobalFisher, FisherError> {
    accumulate(&fisher_per_view(scene, views, config))
}

/// Per-Gaussian scores over the scene's training views, rounded through
/// f32 so that cached and freshly computed scores agree bit for bit.
pub fn gaussian_scores(scene: &GaussianScene, config: &FisherConfig) -> Result<Vec<f64>, FisherError> {
    let global = global_fisher(scene, scene.training_views(), config)?;
    let raw = match config.score {
        GaussianScore::PosteriorVariance => per_gaussian_variance(&global, scene)?,
        GaussianScore::FisherTrace => per_gaussian_trace(&global, scene)?,
    };
    Ok(quantize_f32(&raw))
}

/// Content hash of everything the scores depend on.
pub fn cache_key(scene: &GaussianScene, config: &FisherConfig) -> String {
    let mut h = Sha256::new();
    h.update(scene.to_json().as_bytes());
    h.update(serde_json::to_vec(config).expect("config serialises"));
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, scene: &GaussianScene, config: &FisherConfig) -> PathBuf {
    dir.join(format!("fisher-{}.grid", &cache_key(scene, config)[..16]))
}

/// [`gaussian_scores`] backed by an on-disk cache directory.
pub fn cached_gaussian_scores(
    scene: &GaussianScene,
    config: &FisherConfig,
    dir: &Path,
) -> Result<Vec<f64>, FisherError> {
    let path = cache_path(dir, scene, config);
    if let Ok(grid) = FloatGrid::read(&path) {
        if grid.data.len() == scene.gaussian_count() {
            return Ok(grid.to_f64());
        }
    }
    let scores = gaussian_scores(scene, config)?;
    std::fs::create_dir_all(dir).map_err(GridError::from)?;
    FloatGrid::vector(&scores).write(&path)?;
    Ok(scores)
}

/// Per-view diagonals in parallel, summed in view order.
pub fn fisher_per_view(
    scene: &GaussianScene,
    views: &[TrainingView],
    config: &FisherConfig,
) -> Vec<DiagonalFisher> {
    let subset = config.subset();
    views
        .par_iter()
        .map(|v| fisher_diag(scene, &v.pose, &v.intrinsics, config.lambda, &subset))
        .collect()
}

#[cfg(test)]
mod tests;
