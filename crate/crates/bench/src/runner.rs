//! End-to-end execution of a scenario, one query at a time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splatloc_core::fisher::cached_gaussian_scores;
use splatloc_core::geometry::{pose_error, random_unit_vector, CameraIntrinsics, Pose};
use splatloc_core::matcher::{aggregate_scores, MatcherConfig, QueryObservation};
use splatloc_core::pnp::{percentile, RansacConfig};
use splatloc_core::render::render;
use splatloc_core::refine::{local_refine, refine, LocalContext, ParticleRecord, PriorSource, RefineError};
use splatloc_core::rng::{derive_seed, stream};
use splatloc_core::scene::{generate_synthetic_scene, load_scene, GaussianScene, SceneLayout};
use nalgebra::UnitQuaternion;

use crate::config::{load_candidate_file, CandidateEntry, PriorModel, ScenarioConfig};
use crate::metrics::{summarize, MetricsReport};
use crate::BenchError;

const TAG_SCENE: u64 = 0x5ce;
const TAG_QUERY: u64 = 1;
const TAG_PRIOR: u64 = 2;
const TAG_MATCH: u64 = 3;
const TAG_RANSAC: u64 = 4;
const TAG_REFINE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Ok,
    Failed,
}

impl QueryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryStatus::Ok => "ok",
            QueryStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: usize,
    pub truth: Pose,
    pub estimate: Option<Pose>,
    /// Infinite for failed queries.
    pub tx_err_m: f64,
    pub rot_err_deg: f64,
    pub wall_ms: u64,
    pub status: QueryStatus,
    pub failure: Option<String>,
    /// `Σ confidence` over the match set behind the estimate.
    pub confidence_sum: f64,
    /// `Σ rendered uncertainty` over the same match set.
    pub uncertainty_sum: f64,
    /// `(kept, total)` truth outliers in the final inlier set; single-pass
    /// runs only.
    pub outliers_kept: Option<(usize, usize)>,
    #[serde(skip)]
    pub diagnostics: Vec<ParticleRecord>,
}

impl QueryRecord {
    pub fn succeeded(&self) -> bool {
        self.status == QueryStatus::Ok
    }
}

/// Everything shared by the queries of one scenario.
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub scene: GaussianScene,
    pub scores: Vec<f64>,
    pub layout: SceneLayout,
    pub query_k: CameraIntrinsics,
    pub matcher: MatcherConfig,
    pub ransac: RansacConfig,
    candidates: Option<Vec<CandidateEntry>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub records: Vec<QueryRecord>,
    pub report: MetricsReport,
}

/// Output directory: explicit flag, then `SPLATLOC_OUT_DIR`, then the
/// config, then `splatloc-out`.
pub fn resolve_output_dir(flag: Option<&Path>, config: &ScenarioConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(crate::OUT_DIR_ENV) {
        return PathBuf::from(p);
    }
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("splatloc-out"))
}

/// The scenario's synthetic scene, exactly as `prepare` builds it.
pub fn generate_scene(config: &ScenarioConfig) -> Result<GaussianScene, BenchError> {
    generate_synthetic_scene(&config.scene, &mut stream(config.scene_seed, &[TAG_SCENE]))
        .map_err(|e| BenchError::Config(e.to_string()))
}

/// Builds or loads the scene and its uncertainty scores. Scores are cached
/// under `cache_dir` when one is given.
pub fn prepare(config: &ScenarioConfig, cache_dir: Option<&Path>) -> Result<PreparedScenario, BenchError> {
    config.validate()?;
    let scene = match &config.scene_file {
        Some(path) => load_scene(path).map_err(|e| BenchError::SceneIo(format!("{}: {e}", path.display())))?,
        None => generate_scene(config)?,
    };
    let scores = match cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            cached_gaussian_scores(&scene, &config.fisher, dir).map_err(|e| BenchError::SceneIo(e.to_string()))?
        }
        None => splatloc_core::fisher::gaussian_scores(&scene, &config.fisher)
            .map_err(|e| BenchError::SceneIo(e.to_string()))?,
    };
    let candidates = match &config.prior {
        PriorModel::CandidateFile { path } => {
            let entries = load_candidate_file(path)?;
            if entries.len() < config.query_count {
                return Err(BenchError::Config(format!(
                    "candidate file has {} entries for {} queries",
                    entries.len(),
                    config.query_count
                )));
            }
            Some(entries)
        }
        _ => None,
    };
    let mut matcher = config.matcher.clone();
    if config.scene_uncertainty_range && matcher.uncertainty_range.is_none() {
        matcher.uncertainty_range = Some(scene_uncertainty_range(&scene, &scores)?);
    }
    Ok(PreparedScenario {
        config: config.clone(),
        scene,
        scores,
        layout: config.scene.layout,
        query_k: config.query_intrinsics(),
        matcher,
        ransac: config.ransac_config(),
        candidates,
    })
}

/// 5th and 95th percentiles of rendered uncertainty over the covered pixels
/// of every training view.
pub fn scene_uncertainty_range(scene: &GaussianScene, scores: &[f64]) -> Result<(f64, f64), BenchError> {
    let mut values = Vec::new();
    for view in scene.training_views() {
        let buf = render(scene, &view.pose, &view.intrinsics, Some(scores)).map_err(|e| BenchError::SceneIo(e.to_string()))?;
        values.extend(
            buf.uncertainty
                .iter()
                .zip(&buf.accumulated_alpha)
                .filter(|(_, a)| **a > 0.5)
                .map(|(u, _)| *u),
        );
    }
    if values.is_empty() {
        return Err(BenchError::SceneIo("training views see no surface".into()));
    }
    values.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&values, 5.0), percentile(&values, 95.0));
    if hi <= lo {
        return Err(BenchError::SceneIo("rendered uncertainty is constant over the training views".into()));
    }
    Ok((lo, hi))
}

fn rotate<R: Rng + ?Sized>(pose: &Pose, angle_deg: f64, rng: &mut R) -> Pose {
    let axis = random_unit_vector(rng);
    Pose::new(
        pose.rotation * UnitQuaternion::from_scaled_axis(axis * angle_deg.to_radians()),
        pose.translation,
    )
}

fn fixed_offset<R: Rng + ?Sized>(pose: &Pose, translation_m: f64, rotation_deg: f64, rng: &mut R) -> Pose {
    let moved = Pose::new(pose.rotation, pose.translation + random_unit_vector(rng) * translation_m);
    rotate(&moved, rotation_deg, rng)
}

impl PreparedScenario {
    fn truth_and_prior(&self, query_id: usize) -> (Pose, PriorSource) {
        let seed = self.config.seed;
        if let Some(entries) = &self.candidates {
            let e = &entries[query_id];
            return (e.truth, PriorSource::CandidateList(e.candidates.clone()));
        }
        let truth = self.layout.sample_view(&mut stream(seed, &[TAG_QUERY, query_id as u64]));
        let mut rng = stream(seed, &[TAG_PRIOR, query_id as u64]);
        let prior = match &self.config.prior {
            PriorModel::PerturbedTruth {
                translation_sigma_m,
                rotation_sigma_deg,
            } => {
                let mut offset = nalgebra::Vector3::zeros();
                if *translation_sigma_m > 0.0 {
                    let n = Normal::new(0.0, *translation_sigma_m).expect("valid sigma");
                    offset = nalgebra::Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                }
                let angle = if *rotation_sigma_deg > 0.0 {
                    Normal::new(0.0, *rotation_sigma_deg).expect("valid sigma").sample(&mut rng)
                } else {
                    0.0
                };
                let moved = Pose::new(truth.rotation, truth.translation + offset);
                PriorSource::SinglePose(rotate(&moved, angle, &mut rng))
            }
            PriorModel::FixedOffset {
                translation_m,
                rotation_deg,
            } => PriorSource::SinglePose(fixed_offset(&truth, *translation_m, *rotation_deg, &mut rng)),
            PriorModel::SyntheticTopK {
                k,
                translation_m,
                rotation_deg,
                wrong_side_first,
                first_only,
            } => {
                let mut list: Vec<Pose> = (0..*k)
                    .map(|_| fixed_offset(&truth, *translation_m, *rotation_deg, &mut rng))
                    .collect();
                if *wrong_side_first {
                    list[0] = self.layout.mirror_through_wall(&list[0]);
                }
                if *first_only {
                    PriorSource::SinglePose(list[0])
                } else {
                    PriorSource::CandidateList(list)
                }
            }
            PriorModel::CandidateFile { .. } => unreachable!("candidate files are loaded in prepare"),
        };
        (truth, prior)
    }

    /// Runs one query end to end. Failures are recorded, never raised.
    pub fn run_query(&self, query_id: usize) -> Result<QueryRecord, BenchError> {
        let start = Instant::now();
        let seed = self.config.seed;
        let (truth, prior) = self.truth_and_prior(query_id);
        let query = QueryObservation::render(&self.scene, &truth, &self.query_k)
            .map_err(|e| BenchError::SceneIo(e.to_string()))?;
        let ctx = LocalContext {
            scene: &self.scene,
            scores: &self.scores,
            query: &query,
            matcher: &self.matcher,
            ransac: &self.ransac,
            uncertainty_sampling: self.config.ablation.uncertainty_pnp,
        };

        let mut record = QueryRecord {
            query_id,
            truth,
            estimate: None,
            tx_err_m: f64::INFINITY,
            rot_err_deg: f64::INFINITY,
            wall_ms: 0,
            status: QueryStatus::Failed,
            failure: None,
            confidence_sum: 0.0,
            uncertainty_sum: 0.0,
            outliers_kept: None,
            diagnostics: Vec::new(),
        };

        if self.config.ablation.mcr {
            let cfg = self.config.refine_config(derive_seed(seed, &[TAG_REFINE, query_id as u64]));
            match refine(&ctx, &prior, &cfg) {
                Ok(out) => {
                    record.estimate = Some(out.pose);
                    let best = splatloc_core::refine::best_particle(&out.particles).expect("non-empty particle set");
                    (record.confidence_sum, record.uncertainty_sum) = best.aggregates;
                    record.diagnostics = out.diagnostics;
                }
                Err(e @ RefineError::AllParticlesFailed) => record.failure = Some(e.to_string()),
                Err(e) => return Err(BenchError::SceneIo(e.to_string())),
            }
        } else {
            let init = match &prior {
                PriorSource::SinglePose(p) => *p,
                PriorSource::CandidateList(list) => list[0],
            };
            let mut match_rng = stream(seed, &[TAG_MATCH, query_id as u64]);
            let mut ransac_rng = stream(seed, &[TAG_RANSAC, query_id as u64]);
            match local_refine(&ctx, &init, &self.query_k, &mut match_rng, &mut ransac_rng) {
                Ok(out) => {
                    record.estimate = Some(out.result.pose);
                    (record.confidence_sum, record.uncertainty_sum) = aggregate_scores(&out.matches);
                    let (_, _, idx) = out.matches.solver_inputs();
                    let total = out.matches.outlier_count();
                    let kept = idx
                        .iter()
                        .zip(&out.result.inlier_mask)
                        .filter(|(i, m)| **m && out.matches.matches[**i].is_outlier_truth)
                        .count();
                    record.outliers_kept = Some((kept, total));
                }
                Err(e) => record.failure = Some(e.to_string()),
            }
        }

        if let Some(est) = record.estimate {
            let e = pose_error(&est, &truth);
            record.tx_err_m = e.translation_error;
            record.rot_err_deg = e.rotation_error;
            record.status = QueryStatus::Ok;
        }
        record.wall_ms = if self.config.deterministic_timing {
            0
        } else {
            start.elapsed().as_millis() as u64
        };
        Ok(record)
    }

    pub fn run(&self) -> Result<ScenarioRun, BenchError> {
        let records = (0..self.config.query_count)
            .into_par_iter()
            .map(|i| self.run_query(i))
            .collect::<Result<Vec<_>, _>>()?;
        let report = summarize(&records);
        Ok(ScenarioRun { records, report })
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, BenchError> {
    prepare(config, None)?.run()
}

/// Writes `report.csv`, `metrics.json` and `diagnostics.jsonl` into `dir`.
pub fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    crate::metrics::write_csv(&run.records, &mut csv)?;
    std::fs::write(dir.join("report.csv"), csv)?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&run.report).expect("report serialises"),
    )?;
    let mut lines = String::new();
    for r in &run.records {
        for d in &r.diagnostics {
            let mut v = serde_json::to_value(d).expect("record serialises");
            v["query_id"] = r.query_id.into();
            lines.push_str(&v.to_string());
            lines.push('\n');
        }
    }
    std::fs::write(dir.join("diagnostics.jsonl"), lines)?;
    Ok(())
}
