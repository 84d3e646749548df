//! Rigid transforms, the pinhole camera model and pixel lifting.
//!
//! A [`Pose`] always maps camera-frame points to world-frame points
//! (camera-to-world). The camera frame follows the usual computer-vision
//! convention: +x right, +y down, +z forward. Pixel coordinates place the
//! centre of pixel `(i, j)` at the continuous coordinate `(i, j)`.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Depths at or below this value are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({0}, {1}) lies outside the image")]
    PixelOutOfBounds(f64, f64),
    #[error("particle set is empty")]
    EmptyParticleSet,
    #[error("particle weights sum to zero")]
    ZeroTotalWeight,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from a camera-to-world rotation matrix (columns are the
    /// camera axes expressed in world coordinates).
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Camera at `eye` looking at `target`, with `up` the approximate world up
    /// direction. Image +y points away from `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = (-up).cross(&z);
        if x.norm() < 1e-9 {
            // looking straight along `up`; any perpendicular axis works
            x = z.cross(&Vector3::x());
            if x.norm() < 1e-9 {
                x = z.cross(&Vector3::y());
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::from_matrix(&Matrix3::from_columns(&[x, y, z]), eye)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Camera-frame point to world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World-frame point to camera frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]` with a normalized quaternion.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
        Self::new(
            UnitQuaternion::from_quaternion(q),
            Vector3::new(v[4], v[5], v[6]),
        )
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 7]>::deserialize(d)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom("pose contains non-finite values"));
        }
        let qn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        if qn < 1e-12 {
            return Err(serde::de::Error::custom("pose quaternion has zero norm"));
        }
        Ok(Pose::from_array(v))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centred principal point and a focal length giving the requested
    /// horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self, GeometryError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Rescales the camera so its longer image side has `long_side` pixels.
    pub fn scaled_to_long_side(&self, long_side: usize) -> CameraIntrinsics {
        let long = self.width.max(self.height) as f64;
        let s = long_side as f64 / long;
        let width = ((self.width as f64 * s).round() as usize).max(1);
        let height = ((self.height as f64 * s).round() as usize).max(1);
        CameraIntrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: ((self.cx + 0.5) * s - 0.5).clamp(0.0, width as f64 - 1.0),
            cy: ((self.cy + 0.5) * s - 0.5).clamp(0.0, height as f64 - 1.0),
            width,
            height,
        }
    }

    /// True when the continuous pixel rounds to a valid pixel index.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }

    /// Nearest pixel index `(col, row)` or `None` outside the image.
    pub fn nearest_pixel(&self, pixel: &Vector2<f64>) -> Option<(usize, usize)> {
        if !pixel.x.is_finite() || !pixel.y.is_finite() || !self.contains(pixel) {
            return None;
        }
        let col = (pixel.x.round().max(0.0) as usize).min(self.width - 1);
        let row = (pixel.y.round().max(0.0) as usize).min(self.height - 1);
        Some((col, row))
    }
}

/// Projects a world point into the camera described by `pose`.
pub fn project(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    point_world: &Vector3<f64>,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let pc = pose.inverse_transform_point(point_world);
    project_camera_point(intrinsics, &pc)
}

pub fn project_camera_point(
    intrinsics: &CameraIntrinsics,
    pc: &Vector3<f64>,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    if !(pc.z > MIN_DEPTH) {
        return Err(GeometryError::NonPositiveDepth(pc.z));
    }
    let u = intrinsics.fx * pc.x / pc.z + intrinsics.cx;
    let v = intrinsics.fy * pc.y / pc.z + intrinsics.cy;
    Ok((Vector2::new(u, v), pc.z))
}

/// Back-projects a pixel at camera depth `depth` into the world frame.
pub fn lift(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    pixel: &Vector2<f64>,
    depth: f64,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > MIN_DEPTH) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !intrinsics.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds(pixel.x, pixel.y));
    }
    let pc = Vector3::new(
        (pixel.x - intrinsics.cx) / intrinsics.fx * depth,
        (pixel.y - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    );
    Ok(pose.transform_point(&pc))
}

/// Translation error in scene units and rotation error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_error: f64,
    pub rotation_error: f64,
}

pub fn pose_error(estimate: &Pose, ground_truth: &Pose) -> PoseError {
    let translation_error = (estimate.translation - ground_truth.translation).norm();
    let rotation_error = estimate.rotation.angle_to(&ground_truth.rotation).to_degrees();
    PoseError {
        translation_error,
        rotation_error: rotation_error.clamp(0.0, 180.0),
    }
}

/// Random pose offset: translation uniform in the cube `[-r, r]³`, rotation
/// about a uniformly random axis by an angle uniform in `[0, rot_range_deg]`.
/// The rotation is applied in the camera frame.
pub fn perturb<R: Rng + ?Sized>(
    pose: &Pose,
    trans_range: f64,
    rot_range_deg: f64,
    rng: &mut R,
) -> Pose {
    let offset = Vector3::new(
        (2.0 * rng.random::<f64>() - 1.0) * trans_range,
        (2.0 * rng.random::<f64>() - 1.0) * trans_range,
        (2.0 * rng.random::<f64>() - 1.0) * trans_range,
    );
    let axis = random_unit_vector(rng);
    let angle = rng.random::<f64>() * rot_range_deg.to_radians();
    let rotation = if angle == 0.0 {
        pose.rotation
    } else {
        pose.rotation * UnitQuaternion::from_scaled_axis(axis * angle)
    };
    Pose::new(rotation, pose.translation + offset)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    // Archimedes: uniform z and azimuth give a uniform direction.
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Weighted pose average: arithmetic mean of translations and the chordal
/// quaternion mean (principal eigenvector of `Σ w q qᵀ`).
pub fn weighted_mean_pose(particles: &[(Pose, f64)]) -> Result<Pose, GeometryError> {
    if particles.is_empty() {
        return Err(GeometryError::EmptyParticleSet);
    }
    let total: f64 = particles.iter().map(|(_, w)| w.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(GeometryError::ZeroTotalWeight);
    }
    let reference = particles
        .iter()
        .find(|(_, w)| *w > 0.0)
        .map(|(p, _)| p.rotation.quaternion().coords)
        .unwrap_or_else(|| particles[0].0.rotation.quaternion().coords);

    let mut translation = Vector3::zeros();
    let mut scatter = Matrix4::<f64>::zeros();
    for (pose, w) in particles {
        let w = w.max(0.0) / total;
        translation += pose.translation * w;
        let mut q: Vector4<f64> = pose.rotation.quaternion().coords;
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        scatter += q * q.transpose() * w;
    }
    let eig = SymmetricEigen::new(scatter);
    let best = eig.eigenvalues.imax();
    let mut v: Vector4<f64> = eig.eigenvectors.column(best).into_owned();
    if v.dot(&reference) < 0.0 {
        v = -v;
    }
    // nalgebra stores quaternion coords as (i, j, k, w)
    let q = nalgebra::Quaternion::new(v[3], v[0], v[1], v[2]);
    Ok(Pose::new(UnitQuaternion::from_quaternion(q), translation))
}
