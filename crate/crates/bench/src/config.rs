//! Scenario files: one TOML document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatloc_core::fisher::FisherConfig;
use splatloc_core::geometry::CameraIntrinsics;
use splatloc_core::matcher::MatcherConfig;
use splatloc_core::pnp::RansacConfig;
use splatloc_core::refine::{ExtractionMode, Perturbation, RefineConfig};
use splatloc_core::scene::SceneConfig;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Indoor,
    Outdoor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryCamera {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for QueryCamera {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            hfov_deg: 65.0,
        }
    }
}

/// How the initial pose estimate handed to refinement is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorModel {
    /// Truth plus zero-mean Gaussian noise per translation axis and a
    /// rotation about a random axis with Gaussian angle.
    PerturbedTruth {
        translation_sigma_m: f64,
        rotation_sigma_deg: f64,
    },
    /// Truth displaced by exactly this distance and angle in random
    /// directions.
    FixedOffset { translation_m: f64, rotation_deg: f64 },
    /// Truth poses and retrieval candidates read from a JSON file.
    CandidateFile { path: PathBuf },
    /// `k` candidates at a fixed offset from the truth. With
    /// `wrong_side_first` the first one is mirrored through the facade; with
    /// `first_only` only that first candidate is used as a single prior.
    SyntheticTopK {
        k: usize,
        translation_m: f64,
        rotation_deg: f64,
        #[serde(default)]
        wrong_side_first: bool,
        #[serde(default)]
        first_only: bool,
    },
}

impl Default for PriorModel {
    fn default() -> Self {
        PriorModel::PerturbedTruth {
            translation_sigma_m: 0.1,
            rotation_sigma_deg: 1.0,
        }
    }
}

/// Entries of a candidate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub truth: splatloc_core::Pose,
    pub candidates: Vec<splatloc_core::Pose>,
}

pub fn load_candidate_file(path: &Path) -> Result<Vec<CandidateEntry>, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read candidate file {}: {e}", path.display())))?;
    let entries: Vec<CandidateEntry> = serde_json::from_str(&text)
        .map_err(|e| BenchError::Config(format!("bad candidate file {}: {e}", path.display())))?;
    if entries.is_empty() || entries.iter().any(|e| e.candidates.is_empty()) {
        return Err(BenchError::Config("candidate file needs non-empty candidate lists".into()));
    }
    Ok(entries)
}

/// RANSAC settings layered over the profile's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RansacOverrides {
    pub reproj_threshold_px: Option<f64>,
    pub max_iterations: Option<usize>,
    pub confidence: Option<f64>,
    pub min_sample: Option<usize>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub clip_lo: Option<f64>,
    pub clip_hi: Option<f64>,
    pub weighted_refit: Option<bool>,
}

impl RansacOverrides {
    pub fn resolve(&self, profile: Profile) -> RansacConfig {
        let mut c = match profile {
            Profile::Indoor => RansacConfig::indoor(),
            Profile::Outdoor => RansacConfig::outdoor(),
        };
        macro_rules! take {
            ($($f:ident),*) => {
                $(if let Some(v) = self.$f { c.$f = v; })*
            };
        }
        take!(reproj_threshold_px, max_iterations, confidence, min_sample, beta, epsilon, clip_lo, clip_hi, weighted_refit);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub iterations: usize,
    pub particles: usize,
    pub first_perturbation: Perturbation,
    pub later_perturbation: Perturbation,
    pub resolution_schedule: Vec<usize>,
    /// Defaults to the profile's choice.
    pub extraction: Option<ExtractionMode>,
    pub use_ssim_final: bool,
    pub resample_after_final: bool,
}

impl Default for RefineSection {
    fn default() -> Self {
        let d = RefineConfig::default();
        Self {
            iterations: d.iterations,
            particles: d.particles,
            first_perturbation: d.first_perturbation,
            later_perturbation: d.later_perturbation,
            resolution_schedule: d.resolution_schedule,
            extraction: None,
            use_ssim_final: d.use_ssim_final,
            resample_after_final: d.resample_after_final,
        }
    }
}

impl RefineSection {
    pub fn resolve(&self, profile: Profile, seed: u64) -> RefineConfig {
        let base = match profile {
            Profile::Indoor => RefineConfig::indoor(),
            Profile::Outdoor => RefineConfig::outdoor(),
        };
        RefineConfig {
            iterations: self.iterations,
            particles: self.particles,
            first_perturbation: self.first_perturbation,
            later_perturbation: self.later_perturbation,
            resolution_schedule: self.resolution_schedule.clone(),
            extraction: self.extraction.unwrap_or(base.extraction),
            use_ssim_final: self.use_ssim_final,
            resample_after_final: self.resample_after_final,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Uncertainty-weighted hypothesis sampling and scoring in RANSAC.
    pub uncertainty_pnp: bool,
    /// Monte Carlo refinement; off means one render → match → PnP pass at
    /// the prior.
    pub mcr: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            uncertainty_pnp: true,
            mcr: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub query_count: usize,
    /// Load the scene from this file instead of generating it. The layout
    /// in `scene` still decides where queries are placed.
    pub scene_file: Option<PathBuf>,
    pub scene: SceneConfig,
    pub scene_seed: u64,
    pub fisher: FisherConfig,
    pub camera: QueryCamera,
    pub profile: Profile,
    pub prior: PriorModel,
    pub matcher: MatcherConfig,
    pub ransac: RansacOverrides,
    pub refine: RefineSection,
    pub ablation: Ablation,
    pub output_dir: Option<PathBuf>,
    /// Report every wall time as 0 so reports are byte-reproducible.
    pub deterministic_timing: bool,
    /// Set the matcher's uncertainty range from renders of the training
    /// views, unless the matcher section gives one.
    pub scene_uncertainty_range: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            query_count: 10,
            scene_file: None,
            scene: SceneConfig::default(),
            scene_seed: 0,
            fisher: FisherConfig::default(),
            camera: QueryCamera::default(),
            profile: Profile::Indoor,
            prior: PriorModel::default(),
            matcher: MatcherConfig::default(),
            ransac: RansacOverrides::default(),
            refine: RefineSection::default(),
            ablation: Ablation::default(),
            output_dir: None,
            deterministic_timing: false,
            scene_uncertainty_range: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.query_count == 0 {
            return bad("query_count must be at least 1".into());
        }
        if self.scene_file.is_none() {
            self.scene.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if let Err(e) = CameraIntrinsics::from_fov(self.camera.width, self.camera.height, self.camera.hfov_deg) {
            return bad(format!("query camera: {e}"));
        }
        self.matcher.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.ransac_config()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.refine_config(0)
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        match &self.prior {
            PriorModel::PerturbedTruth {
                translation_sigma_m,
                rotation_sigma_deg,
            } if !(*translation_sigma_m >= 0.0 && *rotation_sigma_deg >= 0.0) => {
                bad("prior sigmas must be non-negative".into())
            }
            PriorModel::FixedOffset {
                translation_m,
                rotation_deg,
            } if !(*translation_m >= 0.0 && *rotation_deg >= 0.0) => bad("prior offsets must be non-negative".into()),
            PriorModel::SyntheticTopK { k: 0, .. } => bad("synthetic_top_k needs k >= 1".into()),
            _ => Ok(()),
        }
    }

    pub fn query_intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(self.camera.width, self.camera.height, self.camera.hfov_deg)
            .expect("validated camera")
    }

    pub fn ransac_config(&self) -> RansacConfig {
        self.ransac.resolve(self.profile)
    }

    pub fn refine_config(&self, seed: u64) -> RefineConfig {
        self.refine.resolve(self.profile, seed)
    }
}
