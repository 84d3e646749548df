//! Rank correlation between per-query match statistics and pose error.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::runner::QueryRecord;
use crate::BenchError;

pub const MIN_QUERIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// One side had no rank variation; `rho` is reported as 0.
    pub degenerate: bool,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    assert_eq!(x.len(), y.len(), "paired samples");
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Spearman {
            rho: 0.0,
            degenerate: true,
        };
    }
    Spearman {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub queries: usize,
    pub confidence_vs_error: Spearman,
    pub uncertainty_vs_error: Spearman,
}

fn usable(records: &[QueryRecord]) -> Vec<&QueryRecord> {
    records.iter().filter(|r| r.succeeded() && r.tx_err_m.is_finite()).collect()
}

/// Spearman correlation of aggregate confidence and aggregate uncertainty
/// against translation error, over successful queries.
pub fn correlation_report(records: &[QueryRecord]) -> Result<CorrelationReport, BenchError> {
    let ok = usable(records);
    if ok.len() < MIN_QUERIES {
        return Err(BenchError::InsufficientData {
            got: ok.len(),
            needed: MIN_QUERIES,
        });
    }
    let err: Vec<f64> = ok.iter().map(|r| r.tx_err_m).collect();
    let conf: Vec<f64> = ok.iter().map(|r| r.confidence_sum).collect();
    let unc: Vec<f64> = ok.iter().map(|r| r.uncertainty_sum).collect();
    Ok(CorrelationReport {
        queries: ok.len(),
        confidence_vs_error: spearman(&conf, &err),
        uncertainty_vs_error: spearman(&unc, &err),
    })
}

pub fn write_scatter_csv<W: Write>(records: &[QueryRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "confidence_sum", "uncertainty_sum", "tx_err_m", "rot_err_deg"])?;
    for r in usable(records) {
        w.write_record([
            r.query_id.to_string(),
            r.confidence_sum.to_string(),
            r.uncertainty_sum.to_string(),
            r.tx_err_m.to_string(),
            r.rot_err_deg.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
