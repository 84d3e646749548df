//! Synthetic 2D–2D matcher between a query image and a rendered view, with
//! confidence scores, controllable noise and outliers, and lifting to 2D–3D.

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lift, project, CameraIntrinsics, Pose};
use crate::pnp::{normalize_uncertainties, Correspondence};
use crate::render::{render, ColorImage, RenderBuffers, RenderError};
use crate::scene::GaussianScene;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("only {found} co-visible points, {needed} needed")]
    NotEnoughVisiblePoints { found: usize, needed: usize },
    #[error("map is {got} pixels, view has {expected}")]
    MapDimensionMismatch { got: usize, expected: usize },
    #[error("render baseline {0:.3} m exceeds the matcher's range")]
    BaselineExceeded(f64),
    #[error("invalid matcher config: {0}")]
    InvalidConfig(String),
}

/// The query image with its ground truth, rendered once per query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryObservation {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub color: ColorImage,
    pub depth: Vec<f64>,
}

impl QueryObservation {
    pub fn render(scene: &GaussianScene, pose: &Pose, intrinsics: &CameraIntrinsics) -> Result<Self, RenderError> {
        let buf = render(scene, pose, intrinsics, None)?;
        Ok(Self {
            pose: *pose,
            intrinsics: *intrinsics,
            color: buf.color,
            depth: buf.depth,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub q: Vector2<f64>,
    pub r: Vector2<f64>,
    pub confidence: f64,
    pub uncertainty: f64,
    pub lifted_point: Option<Vector3<f64>>,
    pub is_outlier_truth: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub matches: Vec<Match>,
    pub query_pose_truth: Pose,
    pub render_pose: Pose,
    /// Intrinsics of the rendered view; `r` lives in this image.
    pub intrinsics: CameraIntrinsics,
    /// Intrinsics of the query image; `q` lives in this image.
    pub query_intrinsics: CameraIntrinsics,
}

#[derive(Serialize, Deserialize)]
struct MatchRecord {
    q: [f64; 2],
    r: [f64; 2],
    confidence: f64,
    uncertainty: f64,
    lifted_point: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    query_pose: Pose,
    is_outlier: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct SetRecord {
    render_pose: Pose,
    intrinsics: CameraIntrinsics,
    query_intrinsics: CameraIntrinsics,
    matches: Vec<MatchRecord>,
    truth: TruthRecord,
}

impl CorrespondenceSet {
    pub fn to_json(&self) -> String {
        let rec = SetRecord {
            render_pose: self.render_pose,
            intrinsics: self.intrinsics,
            query_intrinsics: self.query_intrinsics,
            matches: self
                .matches
                .iter()
                .map(|m| MatchRecord {
                    q: [m.q.x, m.q.y],
                    r: [m.r.x, m.r.y],
                    confidence: m.confidence,
                    uncertainty: m.uncertainty,
                    lifted_point: m.lifted_point.map(|p| [p.x, p.y, p.z]),
                })
                .collect(),
            truth: TruthRecord {
                query_pose: self.query_pose_truth,
                is_outlier: self.matches.iter().map(|m| m.is_outlier_truth).collect(),
            },
        };
        serde_json::to_string(&rec).expect("correspondence set serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let rec: SetRecord = serde_json::from_str(text)?;
        if rec.truth.is_outlier.len() != rec.matches.len() {
            return Err(serde::de::Error::custom("truth labels do not match the match list"));
        }
        Ok(Self {
            matches: rec
                .matches
                .into_iter()
                .zip(rec.truth.is_outlier)
                .map(|(m, o)| Match {
                    q: Vector2::from(m.q),
                    r: Vector2::from(m.r),
                    confidence: m.confidence,
                    uncertainty: m.uncertainty,
                    lifted_point: m.lifted_point.map(Vector3::from),
                    is_outlier_truth: o,
                })
                .collect(),
            query_pose_truth: rec.truth.query_pose,
            render_pose: rec.render_pose,
            intrinsics: rec.intrinsics,
            query_intrinsics: rec.query_intrinsics,
        })
    }

    /// Solver inputs for matches with a lifted point: correspondences, their
    /// uncertainties and their indices into `matches`. Truth labels are not
    /// part of the output.
    pub fn solver_inputs(&self) -> (Vec<Correspondence>, Vec<f64>, Vec<usize>) {
        let mut data = Vec::new();
        let mut unc = Vec::new();
        let mut idx = Vec::new();
        for (i, m) in self.matches.iter().enumerate() {
            if let Some(p) = m.lifted_point {
                data.push(Correspondence { pixel: m.q, point: p });
                unc.push(m.uncertainty);
                idx.push(i);
            }
        }
        (data, unc, idx)
    }

    pub fn outlier_count(&self) -> usize {
        self.matches.iter().filter(|m| m.is_outlier_truth).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// `r` resampled uniformly over the rendered image.
    #[default]
    Uniform,
    /// `r` drawn from the most uncertain co-visible pixels, with the true
    /// surface displaced along the viewing ray so the lifted depth is wrong.
    Structured,
}

/// Match quality degradation with the distance between render and query
/// cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineModel {
    pub noise_px_per_m: f64,
    pub noise_px_per_deg: f64,
    pub outlier_fraction_per_m: f64,
    pub max_baseline_m: Option<f64>,
}

impl Default for BaselineModel {
    fn default() -> Self {
        Self {
            noise_px_per_m: 0.0,
            noise_px_per_deg: 0.0,
            outlier_fraction_per_m: 0.0,
            max_baseline_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Total number of matches; `round(outlier_fraction · match_count)` of
    /// them are outliers.
    pub match_count: usize,
    pub outlier_fraction: f64,
    pub pixel_noise_sigma: f64,
    pub confidence_tau: f64,
    pub confidence_noise: f64,
    pub outlier_mode: OutlierMode,
    /// Relative depth-error range of structured outliers.
    pub structured_depth_error: (f64, f64),
    /// Structured outliers come from this top fraction of co-visible pixels
    /// ranked by rendered uncertainty.
    pub structured_top_fraction: f64,
    /// Standard deviation of the relative depth error of inliers per unit of
    /// normalised rendered uncertainty.
    pub inlier_depth_error: f64,
    /// Extra inlier pixel noise at normalised uncertainty 1; matches on poorly
    /// reconstructed surfaces localise less precisely.
    pub uncertainty_pixel_noise: f64,
    /// Fixed `(lo, hi)` range that maps rendered uncertainty to `[0, 1]` for
    /// the inlier depth error. Without it each match set is normalised by its
    /// own 5th and 95th percentiles, which hides differences between views.
    pub uncertainty_range: Option<(f64, f64)>,
    pub baseline: BaselineModel,
    /// Relative depth tolerance of the query-side visibility test.
    pub covisibility_tolerance: f64,
    pub oversampling: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            match_count: 100,
            outlier_fraction: 0.0,
            pixel_noise_sigma: 0.0,
            confidence_tau: 2.0,
            confidence_noise: 0.05,
            outlier_mode: OutlierMode::Uniform,
            structured_depth_error: (0.3, 1.0),
            structured_top_fraction: 0.25,
            inlier_depth_error: 0.0,
            uncertainty_pixel_noise: 0.0,
            uncertainty_range: None,
            baseline: BaselineModel::default(),
            covisibility_tolerance: 0.05,
            oversampling: 10,
        }
    }
}

impl MatcherConfig {
    pub fn noise_free() -> Self {
        Self {
            confidence_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::InvalidConfig(m.into()));
        if self.match_count < 4 {
            return bad("match_count must be at least 4");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.confidence_noise >= 0.0 && self.inlier_depth_error >= 0.0 && self.uncertainty_pixel_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.confidence_tau > 0.0) {
            return bad("confidence_tau must be positive");
        }
        let (lo, hi) = self.structured_depth_error;
        if !(lo >= 0.0 && hi >= lo) {
            return bad("structured_depth_error must be an ordered non-negative range");
        }
        if !(self.structured_top_fraction > 0.0 && self.structured_top_fraction <= 1.0) {
            return bad("structured_top_fraction must lie in (0, 1]");
        }
        if self.oversampling == 0 {
            return bad("oversampling must be positive");
        }
        if let Some((lo, hi)) = self.uncertainty_range {
            if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                return bad("uncertainty_range must be an increasing non-negative pair");
            }
        }
        Ok(())
    }
}

/// Monotone decreasing map from true pixel error to confidence, plus noise.
pub fn confidence_from_error<R: Rng + ?Sized>(err_px: f64, tau: f64, noise: f64, rng: &mut R) -> f64 {
    let base = if err_px.is_finite() { (-err_px / tau).exp() } else { 0.0 };
    let jitter = if noise > 0.0 {
        Normal::new(0.0, noise).expect("valid sigma").sample(rng)
    } else {
        0.0
    };
    (base + jitter).clamp(0.0, 1.0)
}

struct PoolEntry {
    pixel: Vector2<f64>,
    depth: f64,
    uncertainty: f64,
}

fn clamp_to_image(p: Vector2<f64>, k: &CameraIntrinsics) -> Vector2<f64> {
    let eps = 1e-9;
    Vector2::new(
        p.x.clamp(-0.5, k.width as f64 - 0.5 - eps),
        p.y.clamp(-0.5, k.height as f64 - 0.5 - eps),
    )
}

fn gaussian2<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vector2<f64> {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("valid sigma");
        Vector2::new(n.sample(rng), n.sample(rng))
    } else {
        Vector2::zeros()
    }
}

/// Generates matches between the query and the view rendered at
/// `render_pose`, then lifts them through the rendered depth.
pub fn generate_matches<R: Rng + ?Sized>(
    query: &QueryObservation,
    render_pose: &Pose,
    render_k: &CameraIntrinsics,
    buffers: &RenderBuffers,
    config: &MatcherConfig,
    rng: &mut R,
) -> Result<CorrespondenceSet, MatcherError> {
    config.validate()?;
    let npx = render_k.pixel_count();
    if buffers.depth.len() != npx || buffers.uncertainty.len() != npx {
        return Err(MatcherError::MapDimensionMismatch {
            got: buffers.depth.len(),
            expected: npx,
        });
    }
    let qk = &query.intrinsics;
    if query.depth.len() != qk.pixel_count() {
        return Err(MatcherError::MapDimensionMismatch {
            got: query.depth.len(),
            expected: qk.pixel_count(),
        });
    }

    let baseline = (render_pose.center() - query.pose.center()).norm();
    if let Some(max) = config.baseline.max_baseline_m {
        if baseline > max {
            return Err(MatcherError::BaselineExceeded(baseline));
        }
    }
    let angle = render_pose.rotation.angle_to(&query.pose.rotation).to_degrees();
    let sigma = config.pixel_noise_sigma
        + config.baseline.noise_px_per_m * baseline
        + config.baseline.noise_px_per_deg * angle;
    let fraction = if config.baseline.outlier_fraction_per_m > 0.0 {
        (config.outlier_fraction + config.baseline.outlier_fraction_per_m * baseline).min(0.9)
    } else {
        config.outlier_fraction
    };
    let n = config.match_count;
    let n_out = (fraction * n as f64).round() as usize;
    let n_in = n - n_out;

    // co-visible pool of rendered pixel centres
    let mut pool: Vec<PoolEntry> = Vec::new();
    for _ in 0..config.oversampling * n {
        let col = rng.random_range(0..render_k.width);
        let row = rng.random_range(0..render_k.height);
        let d = buffers.depth_at(col, row);
        if !(d > 0.0) {
            continue;
        }
        let px = Vector2::new(col as f64, row as f64);
        let Ok(x) = lift(render_pose, render_k, &px, d) else {
            continue;
        };
        let Ok((qpx, z)) = project(&query.pose, qk, &x) else {
            continue;
        };
        let Some((qc, qr)) = qk.nearest_pixel(&qpx) else {
            continue;
        };
        let qd = query.depth[qr * qk.width + qc];
        if !(qd > 0.0) || (qd - z).abs() > config.covisibility_tolerance * z {
            continue;
        }
        pool.push(PoolEntry {
            pixel: px,
            depth: d,
            uncertainty: buffers.uncertainty_at(col, row),
        });
    }
    if pool.len() < n {
        return Err(MatcherError::NotEnoughVisiblePoints {
            found: pool.len(),
            needed: n,
        });
    }
    let pool_u: Vec<f64> = pool.iter().map(|p| p.uncertainty).collect();
    let unit_u = match config.uncertainty_range {
        Some((lo, hi)) => pool_u.iter().map(|u| ((u - lo) / (hi - lo)).clamp(0.0, 1.0)).collect(),
        None => normalize_uncertainties(&pool_u, 5.0, 95.0).expect("non-empty pool"),
    };

    // choose which pool entries become outliers and inliers
    let mut outlier_idx: Vec<usize> = if n_out == 0 {
        Vec::new()
    } else {
        match config.outlier_mode {
            OutlierMode::Uniform => rand::seq::index::sample(rng, pool.len(), n_out).into_vec(),
            OutlierMode::Structured => {
                let mut ranked: Vec<usize> = (0..pool.len()).collect();
                ranked.sort_by(|a, b| pool_u[*b].total_cmp(&pool_u[*a]).then(a.cmp(b)));
                let top = ((config.structured_top_fraction * pool.len() as f64).ceil() as usize)
                    .max(n_out)
                    .min(pool.len());
                rand::seq::index::sample(rng, top, n_out)
                    .into_iter()
                    .map(|i| ranked[i])
                    .collect()
            }
        }
    };
    outlier_idx.sort_unstable();
    let remaining: Vec<usize> = (0..pool.len()).filter(|i| outlier_idx.binary_search(i).is_err()).collect();
    let inlier_idx: Vec<usize> = rand::seq::index::sample(rng, remaining.len(), n_in)
        .into_iter()
        .map(|i| remaining[i])
        .collect();

    let project_query = |x: &Vector3<f64>| -> Option<Vector2<f64>> {
        let (p, _) = project(&query.pose, qk, x).ok()?;
        qk.contains(&p).then_some(p)
    };

    let mut matches = Vec::with_capacity(n);
    for &i in &inlier_idx {
        let e = &pool[i];
        let mut scale = 1.0;
        if config.inlier_depth_error > 0.0 {
            let s = Normal::new(0.0, config.inlier_depth_error * unit_u[i]).expect("valid sigma").sample(rng);
            scale = (1.0 + s).max(0.2);
        }
        let truth_point = lift(render_pose, render_k, &e.pixel, e.depth * scale).expect("pool entry lifts");
        let q0 = project_query(&truth_point)
            .or_else(|| project_query(&lift(render_pose, render_k, &e.pixel, e.depth).expect("pool entry lifts")))
            .expect("pool entry is co-visible");
        let s_i = sigma + config.uncertainty_pixel_noise * unit_u[i];
        let q = clamp_to_image(q0 + gaussian2(s_i, rng), qk);
        let r = clamp_to_image(e.pixel + gaussian2(s_i, rng), render_k);
        matches.push((q, r, false));
    }
    for &i in &outlier_idx {
        let e = &pool[i];
        let true_q = project_query(&lift(render_pose, render_k, &e.pixel, e.depth).expect("pool entry lifts"))
            .expect("pool entry is co-visible");
        let (q0, r0) = match config.outlier_mode {
            OutlierMode::Uniform => {
                let r = Vector2::new(
                    rng.random::<f64>() * render_k.width as f64 - 0.5,
                    rng.random::<f64>() * render_k.height as f64 - 0.5,
                );
                (true_q, r)
            }
            OutlierMode::Structured => {
                let (lo, hi) = config.structured_depth_error;
                let mut found = None;
                for _ in 0..8 {
                    let err = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                    let displaced = lift(render_pose, render_k, &e.pixel, e.depth * (1.0 + err)).expect("positive depth");
                    if let Some(p) = project_query(&displaced) {
                        found = Some(p);
                        break;
                    }
                }
                (found.unwrap_or(true_q), e.pixel)
            }
        };
        let q = clamp_to_image(q0 + gaussian2(sigma, rng), qk);
        let r = clamp_to_image(r0 + gaussian2(sigma, rng), render_k);
        matches.push((q, r, true));
    }
    matches.shuffle(rng);

    let mut set = CorrespondenceSet {
        matches: matches
            .into_iter()
            .map(|(q, r, out)| Match {
                q,
                r,
                confidence: 0.0,
                uncertainty: 0.0,
                lifted_point: None,
                is_outlier_truth: out,
            })
            .collect(),
        query_pose_truth: query.pose,
        render_pose: *render_pose,
        intrinsics: *render_k,
        query_intrinsics: *qk,
    };
    lift_in_place(&mut set, &buffers.depth, &buffers.uncertainty)?;
    for m in &mut set.matches {
        let err = m
            .lifted_point
            .and_then(|p| project(&query.pose, qk, &p).ok())
            .map_or(f64::INFINITY, |(p, _)| (p - m.q).norm());
        m.confidence = confidence_from_error(err, config.confidence_tau, config.confidence_noise, rng);
    }
    Ok(set)
}

fn lift_in_place(set: &mut CorrespondenceSet, depth: &[f64], uncertainty: &[f64]) -> Result<(), MatcherError> {
    let k = set.intrinsics;
    for map in [depth, uncertainty] {
        if map.len() != k.pixel_count() {
            return Err(MatcherError::MapDimensionMismatch {
                got: map.len(),
                expected: k.pixel_count(),
            });
        }
    }
    let pose = set.render_pose;
    for m in &mut set.matches {
        let Some((c, r)) = k.nearest_pixel(&m.r) else {
            m.lifted_point = None;
            m.uncertainty = 0.0;
            continue;
        };
        let i = r * k.width + c;
        m.uncertainty = uncertainty[i];
        m.lifted_point = lift(&pose, &k, &m.r, depth[i]).ok();
    }
    Ok(())
}

/// Lifts every match through `depth_map` at the nearest pixel to `r` and
/// attaches the rendered uncertainty there.
pub fn lift_matches(
    set: &CorrespondenceSet,
    depth_map: &[f64],
    uncertainty_map: &[f64],
) -> Result<CorrespondenceSet, MatcherError> {
    let mut out = set.clone();
    lift_in_place(&mut out, depth_map, uncertainty_map)?;
    Ok(out)
}

/// `(Σ confidence, Σ uncertainty)` over all matches.
pub fn aggregate_scores(set: &CorrespondenceSet) -> (f64, f64) {
    set.matches
        .iter()
        .fold((0.0, 0.0), |(c, u), m| (c + m.confidence, u + m.uncertainty))
}
