//! Monte Carlo pose refinement. Particles are seeded around a prior, each one
//! is pulled towards the query by render → match → PnP, and the set is
//! reweighted and resampled between iterations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{perturb, pose_error, weighted_mean_pose, CameraIntrinsics, GeometryError, Pose};
use crate::matcher::{aggregate_scores, generate_matches, CorrespondenceSet, MatcherConfig, MatcherError, QueryObservation};
use crate::pnp::{normalize_uncertainties, ransac_pnp, PnpError, PnpResult, RansacConfig};
use crate::render::{render, ssim, RenderError, SsimError};
use crate::rng::stream;
use crate::scene::GaussianScene;

const TAG_SEED: u64 = 0;
const TAG_PERTURB: u64 = 1;
const TAG_MATCH: u64 = 2;
const TAG_RANSAC: u64 = 3;
const TAG_RESAMPLE: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("every particle failed")]
    AllParticlesFailed,
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error("candidate list is empty")]
    EmptyCandidateList,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Ssim(#[from] SsimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Why a single particle's local correction produced no pose.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalFailure {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Solver(#[from] PnpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleStatus {
    Active,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
    pub status: ParticleStatus,
    pub last_result: Option<PnpResult>,
    /// `Σ S·(1 − U)` over the particle's last match set.
    pub score_sum: f64,
    /// Raw `(Σ S, Σ U)` of the last match set.
    pub aggregates: (f64, f64),
}

impl Particle {
    fn fresh(pose: Pose, weight: f64) -> Self {
        Self {
            pose,
            weight,
            status: ParticleStatus::Active,
            last_result: None,
            score_sum: 0.0,
            aggregates: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

impl Perturbation {
    pub const NONE: Self = Self {
        translation_m: 0.0,
        rotation_deg: 0.0,
    };

    fn apply<R: Rng + ?Sized>(&self, pose: &Pose, rng: &mut R) -> Pose {
        perturb(pose, self.translation_m, self.rotation_deg, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    WeightedMean,
    BestParticle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub particles: usize,
    /// Applied when seeding, before the first correction.
    pub first_perturbation: Perturbation,
    /// Applied at the start of every later iteration.
    pub later_perturbation: Perturbation,
    /// Long side of the rendered view per iteration; the last entry repeats.
    pub resolution_schedule: Vec<usize>,
    pub extraction: ExtractionMode,
    pub use_ssim_final: bool,
    pub resample_after_final: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            particles: 8,
            first_perturbation: Perturbation {
                translation_m: 0.10,
                rotation_deg: 0.01,
            },
            later_perturbation: Perturbation {
                translation_m: 0.01,
                rotation_deg: 0.01,
            },
            resolution_schedule: vec![256, 512],
            extraction: ExtractionMode::WeightedMean,
            use_ssim_final: true,
            resample_after_final: false,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn indoor() -> Self {
        Self::default()
    }

    pub fn outdoor() -> Self {
        Self {
            extraction: ExtractionMode::BestParticle,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::InvalidConfig(m.into()));
        if self.iterations == 0 || self.particles == 0 {
            return bad("iterations and particles must be positive");
        }
        for p in [self.first_perturbation, self.later_perturbation] {
            if !(p.translation_m >= 0.0 && p.rotation_deg >= 0.0) {
                return bad("perturbation ranges must be non-negative");
            }
        }
        if self.resolution_schedule.is_empty() || self.resolution_schedule.contains(&0) {
            return bad("resolution schedule needs positive entries");
        }
        Ok(())
    }

    fn resolution(&self, iteration: usize) -> usize {
        let last = self.resolution_schedule.len() - 1;
        self.resolution_schedule[iteration.min(last)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    SinglePose(Pose),
    /// Retrieval-style candidates, assigned to particles round-robin.
    CandidateList(Vec<Pose>),
}

/// `m` particles around the prior, perturbed by the first-iteration ranges,
/// with uniform weights.
pub fn seed_particles<R: Rng + ?Sized>(
    prior: &PriorSource,
    config: &RefineConfig,
    rng: &mut R,
) -> Result<Vec<Particle>, RefineError> {
    config.validate()?;
    let candidates: &[Pose] = match prior {
        PriorSource::SinglePose(p) => std::slice::from_ref(p),
        PriorSource::CandidateList(list) if list.is_empty() => return Err(RefineError::EmptyCandidateList),
        PriorSource::CandidateList(list) => list,
    };
    let m = config.particles;
    Ok((0..m)
        .map(|j| {
            let base = &candidates[j % candidates.len()];
            Particle::fresh(config.first_perturbation.apply(base, rng), 1.0 / m as f64)
        })
        .collect())
}

/// Normalised importance weights from per-particle `Σ S(1−U)` sums; `None`
/// marks a failed particle, which gets exactly zero. If every active sum is
/// zero the active particles share the weight evenly.
pub fn importance_weights(score_sums: &[Option<f64>]) -> Result<Vec<f64>, RefineError> {
    let active = score_sums.iter().filter(|s| s.is_some()).count();
    if active == 0 {
        return Err(RefineError::AllParticlesFailed);
    }
    let total: f64 = score_sums.iter().flatten().sum();
    if total > 0.0 && total.is_finite() {
        Ok(score_sums.iter().map(|s| s.map_or(0.0, |v| v / total)).collect())
    } else {
        let w = 1.0 / active as f64;
        Ok(score_sums.iter().map(|s| if s.is_some() { w } else { 0.0 }).collect())
    }
}

/// `Σ S(1−U)` per particle, with `U` clipped and min-max normalised over the
/// pooled matches of every active particle.
pub fn particle_scores(match_sets: &[Option<&CorrespondenceSet>], clip: (f64, f64)) -> Vec<Option<f64>> {
    let pooled: Vec<f64> = match_sets
        .iter()
        .flatten()
        .flat_map(|s| s.matches.iter().map(|m| m.uncertainty))
        .collect();
    let unit = if pooled.is_empty() {
        Vec::new()
    } else {
        normalize_uncertainties(&pooled, clip.0, clip.1).expect("non-empty pool")
    };
    let mut cursor = 0;
    match_sets
        .iter()
        .map(|set| {
            set.map(|s| {
                let sum = s
                    .matches
                    .iter()
                    .zip(&unit[cursor..])
                    .map(|(m, u)| m.confidence * (1.0 - u))
                    .sum();
                cursor += s.matches.len();
                sum
            })
        })
        .collect()
}

/// Offspring counts of systematic resampling with offset `u ∈ [0, 1)`.
pub fn systematic_counts(weights: &[f64], m: usize, u: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts = vec![0; weights.len()];
    let mut acc = 0.0;
    let mut next = 0usize;
    for (j, w) in weights.iter().enumerate() {
        acc += w / total;
        let edge = if j + 1 == weights.len() { m as f64 } else { acc * m as f64 };
        while next < m && u + (next as f64) < edge {
            counts[j] += 1;
            next += 1;
        }
    }
    counts
}

/// Systematic (low-variance) resampling to `particles.len()` offspring with
/// weights reset to `1/m`. Offspring of a failed slot never occur since
/// its weight is zero, so survivors take those slots over.
pub fn resample<R: Rng + ?Sized>(particles: &[Particle], weights: &[f64], rng: &mut R) -> Vec<Particle> {
    let m = particles.len();
    let counts = systematic_counts(weights, m, rng.random::<f64>());
    let mut out = Vec::with_capacity(m);
    for (p, c) in particles.iter().zip(counts) {
        for _ in 0..c {
            let mut child = p.clone();
            child.weight = 1.0 / m as f64;
            child.status = ParticleStatus::Active;
            out.push(child);
        }
    }
    out
}

/// Everything a particle needs to correct itself against the query.
pub struct LocalContext<'a> {
    pub scene: &'a GaussianScene,
    /// Per-Gaussian uncertainty scores used for the uncertainty map.
    pub scores: &'a [f64],
    pub query: &'a QueryObservation,
    pub matcher: &'a MatcherConfig,
    pub ransac: &'a RansacConfig,
    /// Sample RANSAC hypotheses by rendered uncertainty.
    pub uncertainty_sampling: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub result: PnpResult,
    pub matches: CorrespondenceSet,
}

/// Renders at `pose_init`, matches against the query, lifts and solves.
pub fn local_refine<R: Rng + ?Sized>(
    ctx: &LocalContext,
    pose_init: &Pose,
    render_k: &CameraIntrinsics,
    match_rng: &mut R,
    ransac_rng: &mut R,
) -> Result<LocalOutcome, LocalFailure> {
    let buffers = render(ctx.scene, pose_init, render_k, Some(ctx.scores))?;
    let matches = generate_matches(ctx.query, pose_init, render_k, &buffers, ctx.matcher, match_rng)?;
    let (data, unc, _) = matches.solver_inputs();
    let weights = if ctx.uncertainty_sampling && !unc.is_empty() {
        Some(ctx.ransac.weights_for(&unc)?)
    } else {
        None
    };
    let result = ransac_pnp(&data, &ctx.query.intrinsics, weights.as_ref(), ctx.ransac, ransac_rng)?;
    Ok(LocalOutcome { result, matches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Importance,
    Ssim,
}

/// One particle at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleRecord {
    pub iteration: usize,
    pub particle: usize,
    pub stage: Stage,
    pub pose: [f64; 7],
    pub weight: f64,
    pub score_sum: f64,
    pub status: ParticleStatus,
    pub translation_error: f64,
    pub rotation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub pose: Pose,
    pub particles: Vec<Particle>,
    pub diagnostics: Vec<ParticleRecord>,
}

pub fn diagnostics_jsonl(records: &[ParticleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

fn record(iteration: usize, stage: Stage, particles: &[Particle], truth: &Pose) -> Vec<ParticleRecord> {
    particles
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let e = pose_error(&p.pose, truth);
            ParticleRecord {
                iteration,
                particle: j,
                stage,
                pose: p.pose.to_array(),
                weight: p.weight,
                score_sum: p.score_sum,
                status: p.status,
                translation_error: e.translation_error,
                rotation_error: e.rotation_error,
            }
        })
        .collect()
}

/// Pose of the particle with the largest weight; the first one on ties.
pub fn best_particle(particles: &[Particle]) -> Option<&Particle> {
    particles
        .iter()
        .fold(None, |best: Option<&Particle>, p| match best {
            Some(b) if b.weight >= p.weight => Some(b),
            _ => Some(p),
        })
}

fn extract(particles: &[Particle], mode: ExtractionMode) -> Result<Pose, RefineError> {
    match mode {
        ExtractionMode::WeightedMean => {
            let pairs: Vec<(Pose, f64)> = particles.iter().map(|p| (p.pose, p.weight)).collect();
            Ok(weighted_mean_pose(&pairs)?)
        }
        ExtractionMode::BestParticle => best_particle(particles)
            .map(|p| p.pose)
            .ok_or(RefineError::AllParticlesFailed),
    }
}

/// The full loop. Randomness comes from per-particle streams derived from
/// `config.seed`, so results do not depend on thread scheduling.
pub fn refine(ctx: &LocalContext, prior: &PriorSource, config: &RefineConfig) -> Result<RefineOutput, RefineError> {
    let master = config.seed;
    let mut particles = seed_particles(prior, config, &mut stream(master, &[TAG_SEED]))?;
    let truth = ctx.query.pose;
    let mut diagnostics = Vec::new();

    for it in 0..config.iterations {
        let render_k = ctx.query.intrinsics.scaled_to_long_side(config.resolution(it));
        let outcomes: Vec<(Pose, Result<LocalOutcome, LocalFailure>)> = particles
            .par_iter()
            .enumerate()
            .map(|(j, p)| {
                let tags = |t: u64| [it as u64, j as u64, t];
                let start = if it == 0 {
                    p.pose
                } else {
                    config.later_perturbation.apply(&p.pose, &mut stream(master, &tags(TAG_PERTURB)))
                };
                let mut match_rng = stream(master, &tags(TAG_MATCH));
                let mut ransac_rng = stream(master, &tags(TAG_RANSAC));
                (start, local_refine(ctx, &start, &render_k, &mut match_rng, &mut ransac_rng))
            })
            .collect();

        let sets: Vec<Option<&CorrespondenceSet>> =
            outcomes.iter().map(|(_, o)| o.as_ref().ok().map(|o| &o.matches)).collect();
        let clip = (ctx.ransac.clip_lo, ctx.ransac.clip_hi);
        let sums = particle_scores(&sets, clip);
        let weights = importance_weights(&sums)?;

        particles = outcomes
            .into_iter()
            .zip(sums.iter().zip(&weights))
            .map(|((start, outcome), (sum, w))| match outcome {
                Ok(o) => Particle {
                    pose: o.result.pose,
                    weight: *w,
                    status: ParticleStatus::Active,
                    aggregates: aggregate_scores(&o.matches),
                    last_result: Some(o.result),
                    score_sum: sum.unwrap_or(0.0),
                },
                Err(_) => Particle {
                    weight: 0.0,
                    status: ParticleStatus::Failed,
                    ..Particle::fresh(start, 0.0)
                },
            })
            .collect();
        diagnostics.extend(record(it, Stage::Importance, &particles, &truth));

        let last = it + 1 == config.iterations;
        if !last || config.resample_after_final {
            let mut rng = stream(master, &[it as u64, u64::MAX, TAG_RESAMPLE]);
            particles = resample(&particles, &weights, &mut rng);
        }
    }

    if config.use_ssim_final {
        let qk = ctx.query.intrinsics;
        let sims: Vec<Option<f64>> = particles
            .par_iter()
            .map(|p| -> Result<Option<f64>, RefineError> {
                if p.status == ParticleStatus::Failed {
                    return Ok(None);
                }
                let view = render(ctx.scene, &p.pose, &qk, None)?;
                Ok(Some(ssim(&ctx.query.color, &view.color)?.max(0.0)))
            })
            .collect::<Result<_, _>>()?;
        let total: f64 = sims.iter().flatten().sum();
        if total > 0.0 {
            for (p, s) in particles.iter_mut().zip(&sims) {
                p.weight = s.map_or(0.0, |v| v / total);
            }
        }
        diagnostics.extend(record(config.iterations, Stage::Ssim, &particles, &truth));
    }

    if particles.iter().all(|p| p.status == ParticleStatus::Failed) {
        return Err(RefineError::AllParticlesFailed);
    }
    let pose = extract(&particles, config.extraction)?;
    Ok(RefineOutput {
        pose,
        particles,
        diagnostics,
    })
}

#[cfg(test)]
mod tests;
