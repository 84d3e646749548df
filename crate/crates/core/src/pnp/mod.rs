//! EPnP and uncertainty-weighted RANSAC.

mod epnp;

pub use epnp::epnp_weighted;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { got: usize, needed: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no hypothesis reached the minimal inlier count")]
    NoHypothesisFound,
    #[error("empty uncertainty vector")]
    EmptyInput,
    #[error("invalid ransac config: {0}")]
    InvalidConfig(String),
    #[error("{got} weights for {expected} correspondences")]
    WeightLengthMismatch { got: usize, expected: usize },
}

/// A query pixel paired with a world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

pub fn epnp(data: &[Correspondence], intrinsics: &CameraIntrinsics) -> Result<Pose, PnpError> {
    epnp_weighted(data, intrinsics, None)
}

/// Squared reprojection error of `c` under `pose`, `None` behind the camera.
pub fn reprojection_error(pose: &Pose, k: &CameraIntrinsics, c: &Correspondence) -> Option<f64> {
    let p = pose.inverse_transform_point(&c.point);
    if !(p.z > 0.0) {
        return None;
    }
    let u = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    Some((u - c.pixel).norm())
}

/// Linear-interpolated percentile of sorted values, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let f = pos - lo as f64;
    sorted[lo] + f * (sorted[hi] - sorted[lo])
}

/// Clips to the `[lo, hi]` percentiles and rescales to `[0, 1]`; a
/// degenerate range maps everything to 0.
pub fn normalize_uncertainties(values: &[f64], clip_lo: f64, clip_hi: f64) -> Result<Vec<f64>, PnpError> {
    if values.is_empty() {
        return Err(PnpError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, clip_lo);
    let hi = percentile(&sorted, clip_hi);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| ((v.clamp(lo, hi) - lo) / range).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub s: Vec<f64>,
    pub normalized: Vec<f64>,
    pub beta: f64,
    pub epsilon: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl SamplingWeights {
    /// Weights with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            s: self.s.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// `s_i = exp(−β ū_i) + ε` over clipped and normalised uncertainties.
pub fn compute_sampling_weights(
    uncertainties: &[f64],
    beta: f64,
    epsilon: f64,
    clip: (f64, f64),
) -> Result<SamplingWeights, PnpError> {
    let normalized = normalize_uncertainties(uncertainties, clip.0, clip.1)?;
    let s = normalized.iter().map(|u| (-beta * u).exp() + epsilon).collect();
    Ok(SamplingWeights {
        s,
        normalized,
        beta,
        epsilon,
        clip_lo: clip.0,
        clip_hi: clip.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub reproj_threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_sample: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Weight the final refit on the consensus set by `s`.
    pub weighted_refit: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl RansacConfig {
    pub fn indoor() -> Self {
        Self {
            reproj_threshold_px: 1.0,
            max_iterations: 1000,
            confidence: 0.99,
            min_sample: 6,
            beta: 5.0,
            epsilon: 0.01,
            clip_lo: 5.0,
            clip_hi: 95.0,
            weighted_refit: true,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            reproj_threshold_px: 2.5,
            ..Self::indoor()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "indoor" => Some(Self::indoor()),
            "outdoor" => Some(Self::outdoor()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PnpError> {
        if !(self.reproj_threshold_px > 0.0) {
            return Err(PnpError::InvalidConfig("threshold must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PnpError::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        if !(4..=64).contains(&self.min_sample) {
            return Err(PnpError::InvalidConfig("min_sample must be at least 4".into()));
        }
        if !(self.beta > 0.0 && self.epsilon > 0.0) {
            return Err(PnpError::InvalidConfig("beta and epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn weights_for(&self, uncertainties: &[f64]) -> Result<SamplingWeights, PnpError> {
        compute_sampling_weights(uncertainties, self.beta, self.epsilon, (self.clip_lo, self.clip_hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub weighted_consensus: f64,
    pub iterations_used: usize,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|m| **m).count()
    }
}

/// `min_sample` distinct indices drawn sequentially with probability
/// proportional to `p` among those not yet drawn.
fn weighted_sample<R: Rng + ?Sized>(p: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut taken = vec![false; p.len()];
    let mut out = Vec::with_capacity(count);
    let mut total: f64 = p.iter().sum();
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, w) in p.iter().enumerate() {
            if taken[i] {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let i = pick.expect("fewer candidates than draws");
        taken[i] = true;
        total -= p[i];
        out.push(i);
    }
    out
}

fn consensus(
    pose: &Pose,
    data: &[Correspondence],
    k: &CameraIntrinsics,
    s: &[f64],
    threshold: f64,
) -> (Vec<bool>, f64, usize) {
    let mut mask = vec![false; data.len()];
    let mut score = 0.0;
    let mut count = 0;
    for (i, c) in data.iter().enumerate() {
        if let Some(e) = reprojection_error(pose, k, c) {
            if e <= threshold {
                mask[i] = true;
                score += s[i];
                count += 1;
            }
        }
    }
    (mask, score, count)
}

fn subset(data: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    data.iter().zip(mask).filter(|(_, m)| **m).map(|(c, _)| *c).collect()
}

/// RANSAC over EPnP hypotheses. With `weights`, samples are drawn ∝ s and
/// hypotheses scored by `Σ s` over inliers; without, uniformly and by count.
pub fn ransac_pnp<R: Rng + ?Sized>(
    data: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    weights: Option<&SamplingWeights>,
    config: &RansacConfig,
    rng: &mut R,
) -> Result<PnpResult, PnpError> {
    config.validate()?;
    let n = data.len();
    if n < config.min_sample {
        return Err(PnpError::TooFewPoints { got: n, needed: config.min_sample });
    }
    let s: Vec<f64> = match weights {
        Some(w) if w.s.len() != n => {
            return Err(PnpError::WeightLengthMismatch { got: w.s.len(), expected: n });
        }
        Some(w) => w.s.clone(),
        None => vec![1.0; n],
    };
    let max_s = s.iter().cloned().fold(0.0, f64::max);
    let p: Vec<f64> = s.iter().map(|v| v / max_s).collect();

    let mut best: Option<(Pose, f64, usize)> = None;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let idx = weighted_sample(&p, config.min_sample, rng);
        let sample: Vec<Correspondence> = idx.iter().map(|i| data[*i]).collect();
        let Ok(pose) = epnp(&sample, intrinsics) else {
            continue;
        };
        let (_, score, count) = consensus(&pose, data, intrinsics, &s, config.reproj_threshold_px);
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((pose, score, count));
        }
        let ratio = best.as_ref().map_or(0.0, |b| b.2 as f64 / n as f64);
        let miss = 1.0 - ratio.powi(config.min_sample as i32);
        if miss <= 0.0 || miss.powi(iterations as i32) <= 1.0 - config.confidence {
            break;
        }
    }

    let Some((hyp_pose, _, hyp_count)) = best else {
        return Err(PnpError::NoHypothesisFound);
    };
    if hyp_count < config.min_sample {
        return Err(PnpError::NoHypothesisFound);
    }

    // refit on every inlier of the best hypothesis
    let (mut pose, mut mask) = (hyp_pose, consensus(&hyp_pose, data, intrinsics, &s, config.reproj_threshold_px).0);
    let inliers = subset(data, &mask);
    let w: Vec<f64> = s.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    let refit = if config.weighted_refit && weights.is_some() {
        epnp_weighted(&inliers, intrinsics, Some(&w))
    } else {
        epnp(&inliers, intrinsics)
    };
    if let Ok(refit) = refit {
        let (m2, _, c2) = consensus(&refit, data, intrinsics, &s, config.reproj_threshold_px);
        if c2 >= config.min_sample {
            pose = refit;
            mask = m2;
        }
    }
    let weighted_consensus = s.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).sum();
    Ok(PnpResult {
        pose,
        inlier_mask: mask,
        weighted_consensus,
        iterations_used: iterations,
    })
}

#[cfg(test)]
mod tests;
