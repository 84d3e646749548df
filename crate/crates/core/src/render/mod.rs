//! Front-to-back alpha compositing of projected Gaussian footprints.
//!
//! Every primitive is projected with the linearised (EWA) perspective map,
//! culled if behind the near plane, and sorted by camera depth with the
//! primitive index as tie-break. Pixels composite fragments in that order
//! and stop once transmittance falls below [`TRANSMITTANCE_CUTOFF`].

mod ssim;

pub use ssim::{ssim, SsimError};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::scene::{GaussianPrimitive, GaussianScene};

pub const ALPHA_MAX: f64 = 0.999;
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Footprints are truncated at this Mahalanobis radius.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
pub const NEAR_PLANE: f64 = 0.2;

/// Splats whose centre lies outside this multiple of the view frustum are culled.
pub const FRUSTUM_GUARD: f64 = 1.3;
/// Isotropic screen-space variance added to every footprint, px².
pub const SCREEN_DILATION: f64 = 0.3;
/// Depth normalisation is skipped when total weight is below this.
pub const MIN_DEPTH_WEIGHT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("per-gaussian score vector has length {got}, scene has {expected} gaussians")]
    TraceLengthMismatch { got: usize, expected: usize },
    #[error("scene has no gaussians")]
    EmptyScene,
}

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, col: usize, row: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub color: ColorImage,
    /// Normalised expected camera depth, 0 where nothing was rendered.
    pub depth: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub accumulated_alpha: Vec<f64>,
}

impl RenderBuffers {
    pub fn depth_at(&self, col: usize, row: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    pub fn uncertainty_at(&self, col: usize, row: usize) -> f64 {
        self.uncertainty[row * self.width + col]
    }

    pub fn alpha_at(&self, col: usize, row: usize) -> f64 {
        self.accumulated_alpha[row * self.width + col]
    }
}

/// A primitive's screen-space footprint for one view.
#[derive(Debug, Clone)]
pub struct ProjectedSplat {
    pub index: usize,
    /// Mean in camera coordinates.
    pub camera_point: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

impl ProjectedSplat {
    /// Squared Mahalanobis distance of pixel `(col, row)` from the mean.
    #[inline]
    pub fn mahalanobis(&self, col: usize, row: usize) -> (f64, Vector2<f64>) {
        let d = Vector2::new(col as f64 - self.mean2d.x, row as f64 - self.mean2d.y);
        let q = self.conic[(0, 0)] * d.x * d.x
            + 2.0 * self.conic[(0, 1)] * d.x * d.y
            + self.conic[(1, 1)] * d.y * d.y;
        (q, d)
    }

    /// Fragment alpha at a pixel, or `None` outside the truncated footprint.
    /// The flag reports whether the alpha was clamped to [`ALPHA_MAX`].
    #[inline]
    pub fn alpha(&self, col: usize, row: usize) -> Option<(f64, bool, f64, Vector2<f64>)> {
        let (q, d) = self.mahalanobis(col, row);
        if q > FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS {
            return None;
        }
        let raw = self.opacity * (-0.5 * q).exp();
        if raw > ALPHA_MAX {
            Some((ALPHA_MAX, true, q, d))
        } else if raw > 0.0 {
            Some((raw, false, q, d))
        } else {
            None
        }
    }
}

/// Perspective Jacobian of the pinhole projection at camera point `p`.
pub fn projection_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    nalgebra::Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    )
}

pub fn project_splat(
    index: usize,
    g: &GaussianPrimitive,
    world_to_camera: &Matrix3<f64>,
    camera_center: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> Option<ProjectedSplat> {
    let pc = world_to_camera * (g.mean - camera_center);
    if !(pc.z > NEAR_PLANE) {
        return None;
    }
    // near splats far off-axis would otherwise blow up to cover the image
    let lim_x = FRUSTUM_GUARD * (k.width as f64 * 0.5 / k.fx);
    let lim_y = FRUSTUM_GUARD * (k.height as f64 * 0.5 / k.fy);
    if (pc.x / pc.z).abs() > lim_x || (pc.y / pc.z).abs() > lim_y {
        return None;
    }
    let j = projection_jacobian(k, &pc);
    let s2 = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let v = world_to_camera * s2 * world_to_camera.transpose();
    let mut cov = j * v * j.transpose();
    cov[(0, 0)] += SCREEN_DILATION;
    cov[(1, 1)] += SCREEN_DILATION;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let mean2d = Vector2::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    );
    let rx = FOOTPRINT_SIGMAS * cov[(0, 0)].sqrt();
    let ry = FOOTPRINT_SIGMAS * cov[(1, 1)].sqrt();
    let x0 = (mean2d.x - rx).ceil();
    let x1 = (mean2d.x + rx).floor();
    let y0 = (mean2d.y - ry).ceil();
    let y1 = (mean2d.y + ry).floor();
    if x1 < 0.0 || y1 < 0.0 || x0 > (k.width - 1) as f64 || y0 > (k.height - 1) as f64 {
        return None;
    }
    let cols = (x0.max(0.0) as usize, (x1 as usize).min(k.width - 1));
    let rows = (y0.max(0.0) as usize, (y1 as usize).min(k.height - 1));
    if cols.0 > cols.1 || rows.0 > rows.1 {
        return None;
    }
    Some(ProjectedSplat {
        index,
        camera_point: pc,
        mean2d,
        cov2d: cov,
        conic,
        depth: pc.z,
        opacity: g.opacity,
        cols,
        rows,
    })
}

/// Projected, depth-sorted splats plus, for every image row, the indices
/// (into the sorted list) of splats whose footprint box covers that row.
pub struct SplatLayout {
    pub splats: Vec<ProjectedSplat>,
    pub row_lists: Vec<Vec<u32>>,
}

pub fn layout_splats(scene: &GaussianScene, pose: &Pose, k: &CameraIntrinsics) -> SplatLayout {
    let w2c = pose.rotation_matrix().transpose();
    let center = pose.center();
    let mut splats: Vec<ProjectedSplat> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_splat(i, g, &w2c, &center, k))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut row_lists = vec![Vec::new(); k.height];
    for (s, splat) in splats.iter().enumerate() {
        for row in splat.rows.0..=splat.rows.1 {
            row_lists[row].push(s as u32);
        }
    }
    SplatLayout { splats, row_lists }
}

struct RowOutput {
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
    uncertainty: Vec<f64>,
    alpha: Vec<f64>,
}

fn composite_row(
    layout: &SplatLayout,
    scene: &GaussianScene,
    row: usize,
    width: usize,
    with_color: bool,
    scores: Option<&[f64]>,
) -> RowOutput {
    let gaussians = scene.gaussians();
    let mut transmittance = vec![1.0f64; width];
    let mut done = vec![false; width];
    let mut color = vec![[0.0f64; 3]; if with_color { width } else { 0 }];
    let mut depth_sum = vec![0.0f64; width];
    let mut weight_sum = vec![0.0f64; width];
    let mut unc = vec![0.0f64; if scores.is_some() { width } else { 0 }];
    let mut open = width;

    for &s in &layout.row_lists[row] {
        if open == 0 {
            break;
        }
        let splat = &layout.splats[s as usize];
        let g = &gaussians[splat.index];
        for col in splat.cols.0..=splat.cols.1 {
            if done[col] {
                continue;
            }
            let Some((alpha, _, _, _)) = splat.alpha(col, row) else {
                continue;
            };
            let w = alpha * transmittance[col];
            if with_color {
                for c in 0..3 {
                    color[col][c] += g.color[c] * w;
                }
            }
            depth_sum[col] += splat.depth * w;
            weight_sum[col] += w;
            if let Some(scores) = scores {
                unc[col] += scores[splat.index] * splat.depth * w;
            }
            transmittance[col] *= 1.0 - alpha;
            if transmittance[col] < TRANSMITTANCE_CUTOFF {
                done[col] = true;
                open -= 1;
            }
        }
    }

    let depth = depth_sum
        .iter()
        .zip(&weight_sum)
        .map(|(d, w)| if *w >= MIN_DEPTH_WEIGHT { d / w } else { 0.0 })
        .collect();
    RowOutput {
        color,
        depth,
        uncertainty: unc,
        alpha: transmittance.iter().map(|t| 1.0 - t).collect(),
    }
}

fn render_impl(
    scene: &GaussianScene,
    pose: &Pose,
    k: &CameraIntrinsics,
    with_color: bool,
    scores: Option<&[f64]>,
) -> Result<RenderBuffers, RenderError> {
    let n = scene.gaussian_count();
    if n == 0 {
        return Err(RenderError::EmptyScene);
    }
    if let Some(s) = scores {
        if s.len() != n {
            return Err(RenderError::TraceLengthMismatch {
                got: s.len(),
                expected: n,
            });
        }
    }
    let layout = layout_splats(scene, pose, k);
    let rows: Vec<RowOutput> = (0..k.height)
        .into_par_iter()
        .map(|row| composite_row(&layout, scene, row, k.width, with_color, scores))
        .collect();

    let npx = k.pixel_count();
    let mut color = ColorImage::new(k.width, k.height);
    let mut depth = Vec::with_capacity(npx);
    let mut uncertainty = Vec::with_capacity(npx);
    let mut accumulated_alpha = Vec::with_capacity(npx);
    let inv_n = 1.0 / n as f64;
    for (r, out) in rows.into_iter().enumerate() {
        if with_color {
            color.data[r * k.width..(r + 1) * k.width].copy_from_slice(&out.color);
        }
        depth.extend(out.depth);
        accumulated_alpha.extend(out.alpha);
        if scores.is_some() {
            uncertainty.extend(out.uncertainty.iter().map(|u| u * inv_n));
        }
    }
    if scores.is_none() {
        uncertainty = vec![0.0; npx];
    }
    Ok(RenderBuffers {
        width: k.width,
        height: k.height,
        color,
        depth,
        uncertainty,
        accumulated_alpha,
    })
}

/// Renders colour, depth and, when per-Gaussian scores are supplied, the
/// depth-weighted score map `U = (1/N) Σ score_i · d_i · α_i · T_i`.
pub fn render(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    per_gaussian_trace: Option<&[f64]>,
) -> Result<RenderBuffers, RenderError> {
    render_impl(scene, pose, intrinsics, true, per_gaussian_trace)
}

/// Depth channel only.
pub fn render_depth_only(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<f64>, RenderError> {
    Ok(render_impl(scene, pose, intrinsics, false, None)?.depth)
}
