//! Anchor-based Gaussian scenes.
//!
//! Each [`Anchor`] carries a latent feature vector and `O` metric offsets.
//! A fixed [`LinearDecoder`] turns the feature into per-offset opacity,
//! scale and colour, producing one [`GaussianPrimitive`] per anchor/offset
//! pair. Offsets are not decoded; they are stored directly.

use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Lower bound added to every decoded scale, in metres.
pub const SCALE_FLOOR: f64 = 1e-3;

const OPACITY_BIAS: f64 = 3.0;
const FLATTENING: f64 = 4.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("unsupported scene schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: Vector3<f64>,
    pub feature: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
}

/// Affine maps from the anchor feature to pre-activations, one row per
/// output. Opacity has `O` rows, scale and colour `3·O` rows (offset-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder {
    pub feature_dim: usize,
    pub offset_count: usize,
    pub opacity_weights: Vec<Vec<f64>>,
    pub opacity_bias: Vec<f64>,
    pub scale_weights: Vec<Vec<f64>>,
    pub scale_bias: Vec<f64>,
    pub color_weights: Vec<Vec<f64>>,
    pub color_bias: Vec<f64>,
}

/// Decoded attributes of one child Gaussian together with the derivatives
/// of each activation with respect to its pre-activation.
#[derive(Debug, Clone, Copy)]
pub struct DecodedAttributes {
    pub opacity: f64,
    pub scale: [f64; 3],
    pub color: [f64; 3],
    pub d_opacity: f64,
    pub d_scale: [f64; 3],
    pub d_color: [f64; 3],
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearDecoder {
    /// All-zero decoder: opacity 0.5, colour grey, scale `softplus(0) + floor`.
    pub fn zeros(feature_dim: usize, offset_count: usize) -> Self {
        let rows = |n: usize| vec![vec![0.0; feature_dim]; n];
        Self {
            feature_dim,
            offset_count,
            opacity_weights: rows(offset_count),
            opacity_bias: vec![0.0; offset_count],
            scale_weights: rows(3 * offset_count),
            scale_bias: vec![0.0; 3 * offset_count],
            color_weights: rows(3 * offset_count),
            color_bias: vec![0.0; 3 * offset_count],
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let f = self.feature_dim;
        let o = self.offset_count;
        if f == 0 || o == 0 {
            return Err(SceneError::DimensionMismatch(
                "feature_dim and offset_count must be positive".into(),
            ));
        }
        let check = |name: &str, w: &[Vec<f64>], b: &[f64], rows: usize| {
            if w.len() != rows || b.len() != rows || w.iter().any(|r| r.len() != f) {
                return Err(SceneError::DimensionMismatch(format!(
                    "{name} must be {rows}x{f} with {rows} biases"
                )));
            }
            if w.iter().flatten().chain(b).any(|x| !x.is_finite()) {
                return Err(SceneError::DimensionMismatch(format!(
                    "{name} contains non-finite entries"
                )));
            }
            Ok(())
        };
        check("opacity", &self.opacity_weights, &self.opacity_bias, o)?;
        check("scale", &self.scale_weights, &self.scale_bias, 3 * o)?;
        check("color", &self.color_weights, &self.color_bias, 3 * o)?;
        Ok(())
    }

    pub fn decode_attributes(&self, feature: &[f64], offset: usize) -> DecodedAttributes {
        let zo = dot(&self.opacity_weights[offset], feature) + self.opacity_bias[offset];
        let opacity = sigmoid(zo);
        let mut scale = [0.0; 3];
        let mut d_scale = [0.0; 3];
        let mut color = [0.0; 3];
        let mut d_color = [0.0; 3];
        for c in 0..3 {
            let row = 3 * offset + c;
            let zs = dot(&self.scale_weights[row], feature) + self.scale_bias[row];
            scale[c] = softplus(zs) + SCALE_FLOOR;
            d_scale[c] = sigmoid(zs);
            let zc = dot(&self.color_weights[row], feature) + self.color_bias[row];
            color[c] = sigmoid(zc);
            d_color[c] = color[c] * (1.0 - color[c]);
        }
        DecodedAttributes {
            opacity,
            scale,
            color,
            d_opacity: opacity * (1.0 - opacity),
            d_scale,
            d_color,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    /// Per-axis standard deviations (axis-aligned covariance), metres.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    pub parent_anchor: usize,
    pub parent_offset: usize,
}

/// Decodes every anchor into its `O` child primitives, anchor-major.
pub fn decode(
    anchors: &[Anchor],
    decoder: &LinearDecoder,
) -> Result<Vec<GaussianPrimitive>, SceneError> {
    decoder.validate()?;
    let mut out = Vec::with_capacity(anchors.len() * decoder.offset_count);
    for (a, anchor) in anchors.iter().enumerate() {
        if anchor.feature.len() != decoder.feature_dim {
            return Err(SceneError::DimensionMismatch(format!(
                "anchor {a} has feature length {} but decoder expects {}",
                anchor.feature.len(),
                decoder.feature_dim
            )));
        }
        if anchor.offsets.len() != decoder.offset_count {
            return Err(SceneError::DimensionMismatch(format!(
                "anchor {a} has {} offsets but decoder expects {}",
                anchor.offsets.len(),
                decoder.offset_count
            )));
        }
        let finite = anchor.position.iter().all(|x| x.is_finite())
            && anchor.feature.iter().all(|x| x.is_finite())
            && anchor.offsets.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(SceneError::DimensionMismatch(format!(
                "anchor {a} has non-finite entries"
            )));
        }
        for (o, offset) in anchor.offsets.iter().enumerate() {
            let attr = decoder.decode_attributes(&anchor.feature, o);
            out.push(GaussianPrimitive {
                mean: anchor.position + offset,
                scale: Vector3::from(attr.scale),
                opacity: attr.opacity,
                color: attr.color,
                parent_anchor: a,
                parent_offset: o,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

/// Immutable scene: anchors, decoder and the decoded primitive cache.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    anchors: Vec<Anchor>,
    decoder: LinearDecoder,
    training_views: Vec<TrainingView>,
    gaussians: Vec<GaussianPrimitive>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    decoder: LinearDecoder,
    anchors: Vec<Anchor>,
    training_views: Vec<TrainingView>,
}

impl GaussianScene {
    pub fn new(
        anchors: Vec<Anchor>,
        decoder: LinearDecoder,
        training_views: Vec<TrainingView>,
    ) -> Result<Self, SceneError> {
        let gaussians = decode(&anchors, &decoder)?;
        Ok(Self {
            anchors,
            decoder,
            training_views,
            gaussians,
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn decoder(&self) -> &LinearDecoder {
        &self.decoder
    }

    pub fn training_views(&self) -> &[TrainingView] {
        &self.training_views
    }

    pub fn gaussians(&self) -> &[GaussianPrimitive] {
        &self.gaussians
    }

    pub fn gaussian_count(&self) -> usize {
        self.gaussians.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.feature_dim
    }

    pub fn offset_count(&self) -> usize {
        self.decoder.offset_count
    }

    /// Same decoder and views, new anchors.
    pub fn with_anchors(&self, anchors: Vec<Anchor>) -> Result<Self, SceneError> {
        Self::new(anchors, self.decoder.clone(), self.training_views.clone())
    }

    pub fn with_decoder(&self, decoder: LinearDecoder) -> Result<Self, SceneError> {
        Self::new(self.anchors.clone(), decoder, self.training_views.clone())
    }

    pub fn with_training_views(&self, views: Vec<TrainingView>) -> Self {
        Self {
            training_views: views,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        let file = SceneFile {
            version: SCENE_SCHEMA_VERSION,
            decoder: self.decoder.clone(),
            anchors: self.anchors.clone(),
            training_views: self.training_views.clone(),
        };
        serde_json::to_string(&file).expect("scene serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SceneError::Parse("missing integer field `version`".into()))?;
        if version != u64::from(SCENE_SCHEMA_VERSION) {
            return Err(SceneError::SchemaVersionMismatch {
                found: version.min(u64::from(u32::MAX)) as u32,
                expected: SCENE_SCHEMA_VERSION,
            });
        }
        let file: SceneFile =
            serde_json::from_value(value).map_err(|e| SceneError::Parse(e.to_string()))?;
        Self::new(file.anchors, file.decoder, file.training_views)
    }
}

pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<(), SceneError> {
    std::fs::write(path, scene.to_json())?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<GaussianScene, SceneError> {
    let text = std::fs::read_to_string(path)?;
    GaussianScene::from_json(&text)
}

/// Geometry the synthetic generator places anchors on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneLayout {
    /// Open-top box `[-x/2, x/2] × [-y/2, y/2] × [0, z]`: four walls and a floor.
    Room { size: [f64; 3] },
    /// Thick wall in the plane `y = 0`, spanning `[-w/2, w/2] × [0, h]`,
    /// with a textured front (`y < 0`) and back (`y > 0`) face.
    Facade {
        width: f64,
        height: f64,
        thickness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub layout: SceneLayout,
    pub anchor_count: usize,
    pub feature_dim: usize,
    pub offset_count: usize,
    /// Fraction of anchors scattered uniformly through the free volume.
    pub clutter_fraction: f64,
    /// Tangential spread of child offsets around their anchor, metres.
    pub offset_spread: f64,
    /// Typical decoded splat standard deviation, metres.
    pub splat_scale: f64,
    pub training_view_count: usize,
    pub training_width: usize,
    pub training_height: usize,
    pub hfov_deg: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            layout: SceneLayout::Room {
                size: [4.0, 4.0, 2.5],
            },
            anchor_count: 500,
            feature_dim: 8,
            offset_count: 4,
            clutter_fraction: 0.05,
            offset_spread: 0.2,
            splat_scale: 0.15,
            training_view_count: 16,
            training_width: 128,
            training_height: 96,
            hfov_deg: 65.0,
        }
    }
}

impl SceneConfig {
    pub fn facade() -> Self {
        Self {
            layout: SceneLayout::Facade {
                width: 8.0,
                height: 5.0,
                thickness: 0.4,
            },
            anchor_count: 600,
            clutter_fraction: 0.0,
            splat_scale: 0.18,
            offset_spread: 0.25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.anchor_count == 0 {
            return bad("anchor_count must be positive");
        }
        if self.feature_dim == 0 || self.offset_count == 0 {
            return bad("feature_dim and offset_count must be positive");
        }
        if !(0.0..=1.0).contains(&self.clutter_fraction) {
            return bad("clutter_fraction must lie in [0, 1]");
        }
        if !(self.offset_spread >= 0.0) || !(self.splat_scale > SCALE_FLOOR) {
            return bad("offset_spread must be >= 0 and splat_scale above the scale floor");
        }
        if self.training_width == 0 || self.training_height == 0 || !(self.hfov_deg > 0.0) {
            return bad("training camera must have positive size and field of view");
        }
        match self.layout {
            SceneLayout::Room { size } => {
                if size.iter().any(|s| !(*s > 0.0)) {
                    return bad("room extents must be positive");
                }
            }
            SceneLayout::Facade {
                width,
                height,
                thickness,
            } => {
                if !(width > 0.0 && height > 0.0 && thickness > 0.0) {
                    return bad("facade extents must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn training_intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(self.training_width, self.training_height, self.hfov_deg)
            .expect("validated config")
    }
}

struct Surface {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
}

impl Surface {
    fn area(&self) -> f64 {
        self.u.norm() * self.v.norm()
    }
}

impl SceneLayout {
    fn surfaces(&self) -> Vec<Surface> {
        match *self {
            SceneLayout::Room { size: [sx, sy, sz] } => {
                let (hx, hy) = (sx * 0.5, sy * 0.5);
                vec![
                    // floor
                    Surface {
                        origin: Vector3::new(-hx, -hy, 0.0),
                        u: Vector3::new(sx, 0.0, 0.0),
                        v: Vector3::new(0.0, sy, 0.0),
                        normal: Vector3::z(),
                    },
                    Surface {
                        origin: Vector3::new(-hx, -hy, 0.0),
                        u: Vector3::new(sx, 0.0, 0.0),
                        v: Vector3::new(0.0, 0.0, sz),
                        normal: Vector3::y(),
                    },
                    Surface {
                        origin: Vector3::new(-hx, hy, 0.0),
                        u: Vector3::new(sx, 0.0, 0.0),
                        v: Vector3::new(0.0, 0.0, sz),
                        normal: -Vector3::y(),
                    },
                    Surface {
                        origin: Vector3::new(-hx, -hy, 0.0),
                        u: Vector3::new(0.0, sy, 0.0),
                        v: Vector3::new(0.0, 0.0, sz),
                        normal: Vector3::x(),
                    },
                    Surface {
                        origin: Vector3::new(hx, -hy, 0.0),
                        u: Vector3::new(0.0, sy, 0.0),
                        v: Vector3::new(0.0, 0.0, sz),
                        normal: -Vector3::x(),
                    },
                ]
            }
            SceneLayout::Facade {
                width,
                height,
                thickness,
            } => {
                let hw = width * 0.5;
                let ht = thickness * 0.5;
                vec![
                    Surface {
                        origin: Vector3::new(-hw, -ht, 0.0),
                        u: Vector3::new(width, 0.0, 0.0),
                        v: Vector3::new(0.0, 0.0, height),
                        normal: -Vector3::y(),
                    },
                    Surface {
                        origin: Vector3::new(-hw, ht, 0.0),
                        u: Vector3::new(width, 0.0, 0.0),
                        v: Vector3::new(0.0, 0.0, height),
                        normal: Vector3::y(),
                    },
                ]
            }
        }
    }

    /// Axis-aligned box where clutter anchors may be placed.
    fn free_volume(&self) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            // kept inside the camera ring
            SceneLayout::Room { size: [sx, sy, sz] } => (
                Vector3::new(-0.15 * sx, -0.15 * sy, 0.0),
                Vector3::new(0.15 * sx, 0.15 * sy, 0.5 * sz),
            ),
            SceneLayout::Facade {
                width, height, ..
            } => (
                Vector3::new(-0.5 * width, -0.2, 0.0),
                Vector3::new(0.5 * width, 0.2, height),
            ),
        }
    }

    /// Evenly spaced inward-looking training cameras.
    pub fn training_poses(&self, count: usize) -> Vec<Pose> {
        let up = Vector3::z();
        match *self {
            SceneLayout::Room { size: [sx, sy, sz] } => {
                let radius = 0.3 * sx.min(sy);
                let h = 0.5 * sz;
                (0..count)
                    .map(|i| {
                        let phi = std::f64::consts::TAU * i as f64 / count as f64;
                        let eye = Vector3::new(radius * phi.cos(), radius * phi.sin(), h);
                        Pose::look_at(eye, Vector3::new(0.0, 0.0, h), up)
                    })
                    .collect()
            }
            SceneLayout::Facade { width, height, .. } => {
                // arcs on both sides of the wall
                (0..count)
                    .map(|i| {
                        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                        let k = (i / 2) as f64;
                        let per_side = count.div_ceil(2).max(1) as f64;
                        let t = if per_side > 1.0 { k / (per_side - 1.0) } else { 0.5 };
                        let x = (t - 0.5) * 0.8 * width;
                        let eye = Vector3::new(x, side * 3.5, 0.45 * height);
                        let target = Vector3::new(x * 0.7, 0.0, 0.45 * height);
                        Pose::look_at(eye, target, up)
                    })
                    .collect()
            }
        }
    }

    /// Samples a camera pose from the layout's viewing manifold: a jittered
    /// inward ring for rooms, the front side of a facade.
    pub fn sample_view<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        let up = Vector3::z();
        match *self {
            SceneLayout::Room { size: [sx, sy, sz] } => {
                let radius = 0.3 * sx.min(sy) * (0.8 + 0.4 * rng.random::<f64>());
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                let h = 0.5 * sz + 0.2 * (2.0 * rng.random::<f64>() - 1.0);
                let eye = Vector3::new(radius * phi.cos(), radius * phi.sin(), h);
                let target = Vector3::new(
                    0.5 * (2.0 * rng.random::<f64>() - 1.0),
                    0.5 * (2.0 * rng.random::<f64>() - 1.0),
                    0.5 * sz + 0.2 * (2.0 * rng.random::<f64>() - 1.0),
                );
                Pose::look_at(eye, target, up)
            }
            SceneLayout::Facade { width, height, .. } => {
                let x = 0.25 * width * (2.0 * rng.random::<f64>() - 1.0);
                let y = -(2.5 + 1.0 * rng.random::<f64>());
                let z = 0.45 * height + 0.3 * (2.0 * rng.random::<f64>() - 1.0);
                let eye = Vector3::new(x, y, z);
                let target = Vector3::new(
                    x + 0.5 * (2.0 * rng.random::<f64>() - 1.0),
                    0.0,
                    0.45 * height + 0.3 * (2.0 * rng.random::<f64>() - 1.0),
                );
                Pose::look_at(eye, target, up)
            }
        }
    }

    /// Mirror image of a front-side pose through the facade plane, looking
    /// at the back face. Rooms return the pose unchanged.
    pub fn mirror_through_wall(&self, pose: &Pose) -> Pose {
        match self {
            SceneLayout::Facade { .. } => {
                let c = pose.center();
                let f = pose.forward();
                let eye = Vector3::new(c.x, -c.y, c.z);
                let dir = Vector3::new(f.x, -f.y, f.z);
                Pose::look_at(eye, eye + dir, Vector3::z())
            }
            SceneLayout::Room { .. } => *pose,
        }
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma
        })
        .collect()
}

/// Synthetic stand-in for a trained anchor scene.
pub fn generate_synthetic_scene<R: Rng + ?Sized>(
    config: &SceneConfig,
    rng: &mut R,
) -> Result<GaussianScene, SceneError> {
    config.validate()?;
    let f = config.feature_dim;
    let o = config.offset_count;

    let mut decoder = LinearDecoder::zeros(f, o);
    let inv_sqrt_f = 1.0 / (f as f64).sqrt();
    for row in 0..o {
        decoder.opacity_weights[row] = gaussian_vec(rng, f, 0.6 * inv_sqrt_f);
        decoder.opacity_bias[row] = OPACITY_BIAS;
    }
    let scale_bias = softplus_inverse(config.splat_scale - SCALE_FLOOR);
    // With at least three feature channels the first three carry the surface
    // normal, and the decoder flattens each splat along it.
    let oriented = f >= 3;
    for row in 0..3 * o {
        decoder.scale_weights[row] = gaussian_vec(rng, f, 0.25 * config.splat_scale * inv_sqrt_f);
        if oriented {
            decoder.scale_weights[row][row % 3] = -FLATTENING;
        }
        decoder.scale_bias[row] = scale_bias;
        decoder.color_weights[row] = gaussian_vec(rng, f, 2.0 * inv_sqrt_f);
        decoder.color_bias[row] = 0.0;
    }

    let surfaces = config.layout.surfaces();
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total_area: f64 = areas.iter().sum();
    let clutter = ((config.anchor_count as f64) * config.clutter_fraction).round() as usize;
    let on_surface = config.anchor_count - clutter.min(config.anchor_count);
    let (lo, hi) = config.layout.free_volume();

    let mut anchors = Vec::with_capacity(config.anchor_count);
    for i in 0..config.anchor_count {
        let (position, tangent_u, tangent_v, normal) = if i < on_surface {
            let mut pick = rng.random::<f64>() * total_area;
            let mut idx = 0;
            while idx + 1 < surfaces.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let s = &surfaces[idx];
            let p = s.origin + s.u * rng.random::<f64>() + s.v * rng.random::<f64>();
            (p, s.u.normalize(), s.v.normalize(), s.normal)
        } else {
            let p = Vector3::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
                lo.z + (hi.z - lo.z) * rng.random::<f64>(),
            );
            (p, Vector3::x(), Vector3::z(), Vector3::y())
        };
        let mut feature = gaussian_vec(rng, f, 1.0);
        if oriented {
            let clutter = i >= on_surface;
            for axis in 0..3 {
                feature[axis] = if clutter { 0.0 } else { normal[axis].abs() };
            }
        }
        let offsets = (0..o)
            .map(|_| {
                let a = (2.0 * rng.random::<f64>() - 1.0) * config.offset_spread;
                let b = (2.0 * rng.random::<f64>() - 1.0) * config.offset_spread;
                let n = (2.0 * rng.random::<f64>() - 1.0) * 0.1 * config.offset_spread;
                tangent_u * a + tangent_v * b + normal * n
            })
            .collect();
        anchors.push(Anchor {
            position,
            feature,
            offsets,
        });
    }

    let k = config.training_intrinsics();
    let training_views = config
        .layout
        .training_poses(config.training_view_count)
        .into_iter()
        .map(|pose| TrainingView {
            pose,
            intrinsics: k,
        })
        .collect();
    GaussianScene::new(anchors, decoder, training_views)
}
