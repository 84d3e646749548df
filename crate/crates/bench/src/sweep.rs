//! Parameter sweeps and the two-flag ablation table, all on paired seeds.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::metrics::MetricsReport;
use crate::runner::run_scenario;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Particles,
    Beta,
    NoiseSigma,
}

impl FromStr for SweepParam {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "particles" => Ok(Self::Particles),
            "beta" => Ok(Self::Beta),
            "noise_sigma" | "noise" => Ok(Self::NoiseSigma),
            other => Err(BenchError::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Particles => "particles",
            Self::Beta => "beta",
            Self::NoiseSigma => "noise_sigma",
        }
    }

    /// The base config with this parameter set to `value`.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig, BenchError> {
        let mut cfg = base.clone();
        match self {
            Self::Particles => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(BenchError::Config(format!("particle count {value} is not a positive integer")));
                }
                cfg.refine.particles = value as usize;
            }
            Self::Beta => cfg.ransac.beta = Some(value),
            Self::NoiseSigma => cfg.matcher.pixel_noise_sigma = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// Median translation error never increases from one row to the next.
    pub monotone_non_increasing: bool,
}

pub fn monotone_non_increasing(values: &[Option<f64>]) -> bool {
    values.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => b <= a,
        _ => false,
    })
}

/// One scenario run per value. Every row uses the base seed, so the
/// queries and their truth poses are shared across rows.
pub fn sweep(base: &ScenarioConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Config("sweep needs at least one value".into()));
    }
    let rows = values
        .iter()
        .map(|v| {
            let cfg = param.apply(base, *v)?;
            Ok(SweepRow {
                value: *v,
                report: run_scenario(&cfg)?.report,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let medians: Vec<Option<f64>> = rows.iter().map(|r| r.report.median_translation_m).collect();
    Ok(SweepTable {
        param,
        monotone_non_increasing: monotone_non_increasing(&medians),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mcr: bool,
    pub uncertainty_pnp: bool,
    pub report: MetricsReport,
}

/// All four combinations of the refinement and weighted-PnP flags.
pub fn ablation(base: &ScenarioConfig) -> Result<Vec<AblationRow>, BenchError> {
    let mut rows = Vec::with_capacity(4);
    for mcr in [false, true] {
        for upnp in [false, true] {
            let mut cfg = base.clone();
            cfg.ablation.mcr = mcr;
            cfg.ablation.uncertainty_pnp = upnp;
            rows.push(AblationRow {
                mcr,
                uncertainty_pnp: upnp,
                report: run_scenario(&cfg)?.report,
            });
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn format_sweep(table: &SweepTable) -> String {
    let mut s = format!("{:>12} {:>10} {:>10} {:>8} {:>8} {:>6}\n", table.param.name(), "med_t_m", "med_r_deg", "r@2/2", "r@5/5", "fail");
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:>12} {:>10} {:>10} {:>8.3} {:>8.3} {:>6}",
            r.value,
            fmt_opt(r.report.median_translation_m),
            fmt_opt(r.report.median_rotation_deg),
            r.report.recall_2cm_2deg,
            r.report.recall_5cm_5deg,
            r.report.failures
        );
    }
    let _ = writeln!(s, "monotone: {}", table.monotone_non_increasing);
    s
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = format!("{:>5} {:>5} {:>10} {:>10} {:>8} {:>8}\n", "mcr", "upnp", "med_t_m", "med_r_deg", "r@2/2", "r@5/5");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>10} {:>10} {:>8.3} {:>8.3}",
            r.mcr,
            r.uncertainty_pnp,
            fmt_opt(r.report.median_translation_m),
            fmt_opt(r.report.median_rotation_deg),
            r.report.recall_2cm_2deg,
            r.report.recall_5cm_5deg
        );
    }
    s
}
