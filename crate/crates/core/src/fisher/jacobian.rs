//! Analytic derivatives of composited pixel colour with respect to anchor
//! features and offsets.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::params::ParameterLayout;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::render::{layout_splats, projection_jacobian, ProjectedSplat, SplatLayout, TRANSMITTANCE_CUTOFF};
use crate::scene::{DecodedAttributes, GaussianScene};

/// Which pixels of a view take part in a Jacobian or Fisher computation.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelSubset {
    Full,
    /// Every `n`-th pixel along both axes.
    Stride(usize),
    Pixels(Vec<(usize, usize)>),
}

impl PixelSubset {
    fn rows(&self, k: &CameraIntrinsics) -> Vec<(usize, Vec<usize>)> {
        match self {
            PixelSubset::Full => (0..k.height).map(|r| (r, (0..k.width).collect())).collect(),
            PixelSubset::Stride(n) => {
                let n = (*n).max(1);
                (0..k.height)
                    .step_by(n)
                    .map(|r| (r, (0..k.width).step_by(n).collect()))
                    .collect()
            }
            PixelSubset::Pixels(list) => {
                let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
                let mut sorted: Vec<(usize, usize)> = list
                    .iter()
                    .copied()
                    .filter(|(c, r)| *c < k.width && *r < k.height)
                    .collect();
                sorted.sort_by_key(|(c, r)| (*r, *c));
                sorted.dedup();
                for (c, r) in sorted {
                    match rows.last_mut() {
                        Some((row, cols)) if *row == r => cols.push(c),
                        _ => rows.push((r, vec![c])),
                    }
                }
                rows
            }
        }
    }
}

/// Non-zero derivatives of one pixel's RGB, sorted by parameter index.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelJacobian {
    pub col: usize,
    pub row: usize,
    pub entries: Vec<(usize, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub layout: ParameterLayout,
    pub pixels: Vec<PixelJacobian>,
}

impl SparseJacobian {
    pub fn get(&self, col: usize, row: usize, param: usize) -> Option<[f64; 3]> {
        let px = self.pixels.iter().find(|p| p.col == col && p.row == row)?;
        px.entries
            .binary_search_by_key(&param, |(i, _)| *i)
            .ok()
            .map(|i| px.entries[i].1)
    }

    /// Dense `(3·pixels) × params` matrix, row `3p + c` for channel `c`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.layout.len();
        let mut out = Vec::with_capacity(3 * self.pixels.len());
        for px in &self.pixels {
            let mut rows = vec![vec![0.0; n]; 3];
            for (i, v) in &px.entries {
                for c in 0..3 {
                    rows[c][*i] = v[c];
                }
            }
            out.extend(rows);
        }
        out
    }
}

struct Fragment {
    splat: usize,
    alpha: f64,
    clamped: bool,
    transmittance: f64,
    q: f64,
    offset: nalgebra::Vector2<f64>,
}

/// Derivatives of a fragment's alpha with respect to the Gaussian mean
/// (world frame), its per-axis scales and its opacity.
struct AlphaGradient {
    mean: Vector3<f64>,
    scale: [f64; 3],
    opacity: f64,
}

fn alpha_gradient(
    splat: &ProjectedSplat,
    frag: &Fragment,
    scale: &Vector3<f64>,
    w2c: &Matrix3<f64>,
    k: &CameraIntrinsics,
) -> AlphaGradient {
    if frag.clamped {
        return AlphaGradient {
            mean: Vector3::zeros(),
            scale: [0.0; 3],
            opacity: 0.0,
        };
    }
    let a = frag.alpha;
    let p = splat.camera_point;
    let j = projection_jacobian(k, &p);
    // α = o·exp(-q/2), q = dᵀ Σ⁻¹ d, d = pixel − μ₂;  g = Σ⁻¹ d
    let g = splat.conic * frag.offset;
    let h: Vector3<f64> = j.transpose() * g;
    let v = w2c * Matrix3::from_diagonal(&scale.component_mul(scale)) * w2c.transpose();
    let vh = v * h;

    // e_k = (∂J/∂p_k)ᵀ g
    let iz2 = 1.0 / (p.z * p.z);
    let iz3 = iz2 / p.z;
    let e_x = Vector3::new(0.0, 0.0, -k.fx * iz2 * g.x);
    let e_y = Vector3::new(0.0, 0.0, -k.fy * iz2 * g.y);
    let e_z = Vector3::new(
        -k.fx * iz2 * g.x,
        -k.fy * iz2 * g.y,
        2.0 * k.fx * p.x * iz3 * g.x + 2.0 * k.fy * p.y * iz3 * g.y,
    );
    let d_cam = Vector3::new(
        a * (h.x + e_x.dot(&vh)),
        a * (h.y + e_y.dot(&vh)),
        a * (h.z + e_z.dot(&vh)),
    );
    let mean = w2c.transpose() * d_cam;

    let mut ds = [0.0; 3];
    for (axis, d) in ds.iter_mut().enumerate() {
        let m = w2c.column(axis);
        let t = h.dot(&m);
        *d = a * scale[axis] * t * t;
    }
    AlphaGradient {
        mean,
        scale: ds,
        opacity: (-0.5 * frag.q).exp(),
    }
}

pub(crate) struct JacobianContext<'a> {
    scene: &'a GaussianScene,
    layout: SplatLayout,
    attrs: Vec<DecodedAttributes>,
    params: ParameterLayout,
    w2c: Matrix3<f64>,
    k: CameraIntrinsics,
}

impl<'a> JacobianContext<'a> {
    pub(crate) fn new(scene: &'a GaussianScene, pose: &Pose, k: &CameraIntrinsics) -> Self {
        let decoder = scene.decoder();
        let attrs = scene
            .gaussians()
            .iter()
            .map(|g| decoder.decode_attributes(&scene.anchors()[g.parent_anchor].feature, g.parent_offset))
            .collect();
        Self {
            scene,
            layout: layout_splats(scene, pose, k),
            attrs,
            params: ParameterLayout::of_scene(scene),
            w2c: pose.rotation_matrix().transpose(),
            k: *k,
        }
    }

    pub(crate) fn pixel(&self, col: usize, row: usize) -> PixelJacobian {
        let mut frags: Vec<Fragment> = Vec::new();
        let mut t = 1.0;
        for &s in &self.layout.row_lists[row] {
            let splat = &self.layout.splats[s as usize];
            if col < splat.cols.0 || col > splat.cols.1 {
                continue;
            }
            let Some((alpha, clamped, q, offset)) = splat.alpha(col, row) else {
                continue;
            };
            frags.push(Fragment {
                splat: s as usize,
                alpha,
                clamped,
                transmittance: t,
                q,
                offset,
            });
            t *= 1.0 - alpha;
            if t < TRANSMITTANCE_CUTOFF {
                break;
            }
        }

        let gaussians = self.scene.gaussians();
        let decoder = self.scene.decoder();
        let f_dim = self.params.feature_dim;
        let mut entries: Vec<(usize, [f64; 3])> = Vec::with_capacity(frags.len() * (f_dim + 3));
        // Σ_{k>i} c_k α_k T_k per channel
        let mut behind = [0.0f64; 3];
        for frag in frags.iter().rev() {
            let splat = &self.layout.splats[frag.splat];
            let g = &gaussians[splat.index];
            let attr = &self.attrs[splat.index];
            let weight = frag.alpha * frag.transmittance;
            let mut d_alpha = [0.0; 3];
            for c in 0..3 {
                d_alpha[c] = g.color[c] * frag.transmittance - behind[c] / (1.0 - frag.alpha);
            }
            for c in 0..3 {
                behind[c] += g.color[c] * weight;
            }

            let grad = alpha_gradient(splat, frag, &g.scale, &self.w2c, &self.k);
            let anchor = g.parent_anchor;
            let o = g.parent_offset;
            for l in 0..3 {
                let idx = self.params.offset_index(anchor, o, l);
                let dm = grad.mean[l];
                entries.push((idx, [d_alpha[0] * dm, d_alpha[1] * dm, d_alpha[2] * dm]));
            }
            for fi in 0..f_dim {
                let da = grad.opacity * attr.d_opacity * decoder.opacity_weights[o][fi]
                    + (0..3)
                        .map(|ax| grad.scale[ax] * attr.d_scale[ax] * decoder.scale_weights[3 * o + ax][fi])
                        .sum::<f64>();
                let mut v = [0.0; 3];
                for c in 0..3 {
                    v[c] = d_alpha[c] * da
                        + weight * attr.d_color[c] * decoder.color_weights[3 * o + c][fi];
                }
                entries.push((self.params.feature_index(anchor, fi), v));
            }
        }
        entries.sort_by_key(|(i, _)| *i);
        let mut merged: Vec<(usize, [f64; 3])> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => {
                    for c in 0..3 {
                        acc[c] += v[c];
                    }
                }
                _ => merged.push((i, v)),
            }
        }
        PixelJacobian {
            col,
            row,
            entries: merged,
        }
    }

    pub(crate) fn for_each_row<T: Send>(
        &self,
        subset: &PixelSubset,
        f: impl Fn(PixelJacobian) -> T + Sync + Send,
    ) -> Vec<Vec<T>> {
        subset
            .rows(&self.k)
            .into_par_iter()
            .map(|(row, cols)| cols.into_iter().map(|c| f(self.pixel(c, row))).collect())
            .collect()
    }
}

/// Sparse Jacobian of rendered RGB with respect to the scene parameters.
pub fn render_jacobian(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    subset: &PixelSubset,
) -> SparseJacobian {
    let ctx = JacobianContext::new(scene, pose, intrinsics);
    let pixels = ctx.for_each_row(subset, |p| p).into_iter().flatten().collect();
    SparseJacobian {
        layout: ctx.params,
        pixels,
    }
}
