//! Aggregate accuracy metrics and the per-query CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::runner::QueryRecord;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub failures: usize,
    /// Over successful queries; `None` when none succeeded.
    pub median_translation_m: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    pub recall_2cm_2deg: f64,
    pub recall_5cm_5deg: f64,
    /// False when half or more of the queries failed, in which case the
    /// medians describe a minority and should not be compared.
    pub valid: bool,
    /// Mean fraction of truth outliers excluded from the final inlier set,
    /// over single-pass queries that had outliers.
    pub outlier_exclusion: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Fraction of records within both thresholds; failures never count.
pub fn recall(records: &[QueryRecord], max_translation_m: f64, max_rotation_deg: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| r.succeeded() && r.tx_err_m <= max_translation_m && r.rot_err_deg <= max_rotation_deg)
        .count();
    hits as f64 / records.len() as f64
}

pub fn summarize(records: &[QueryRecord]) -> MetricsReport {
    let ok: Vec<&QueryRecord> = records.iter().filter(|r| r.succeeded()).collect();
    let t: Vec<f64> = ok.iter().map(|r| r.tx_err_m).collect();
    let rot: Vec<f64> = ok.iter().map(|r| r.rot_err_deg).collect();
    let exclusion: Vec<f64> = records
        .iter()
        .filter_map(|r| r.outliers_kept)
        .filter(|(_, total)| *total > 0)
        .map(|(kept, total)| 1.0 - kept as f64 / total as f64)
        .collect();
    MetricsReport {
        queries: records.len(),
        failures: records.len() - ok.len(),
        median_translation_m: median(&t),
        median_rotation_deg: median(&rot),
        recall_2cm_2deg: recall(records, 0.02, 2.0),
        recall_5cm_5deg: recall(records, 0.05, 5.0),
        valid: 2 * ok.len() > records.len(),
        outlier_exclusion: (!exclusion.is_empty()).then(|| exclusion.iter().sum::<f64>() / exclusion.len() as f64),
    }
}

/// `query_id,tx_err_m,rot_err_deg,wall_ms,status`, one row per query in id
/// order.
pub fn write_csv<W: Write>(records: &[QueryRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "tx_err_m", "rot_err_deg", "wall_ms", "status"])?;
    let mut sorted: Vec<&QueryRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.query_id);
    for r in sorted {
        w.write_record([
            r.query_id.to_string(),
            r.tx_err_m.to_string(),
            r.rot_err_deg.to_string(),
            r.wall_ms.to_string(),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub query_id: usize,
    pub tx_err_m: f64,
    pub rot_err_deg: f64,
    pub wall_ms: u64,
    pub status: String,
}

pub fn read_csv(text: &str) -> Result<Vec<CsvRow>, BenchError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, BenchError> {
            field(i)
                .parse::<f64>()
                .map_err(|e| BenchError::Config(format!("bad csv number {:?}: {e}", field(i))))
        };
        rows.push(CsvRow {
            query_id: num(0)? as usize,
            tx_err_m: num(1)?,
            rot_err_deg: num(2)?,
            wall_ms: num(3)? as u64,
            status: field(4).to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::QueryStatus;
    use proptest::prelude::*;
    use splatloc_core::Pose;

    fn rec(id: usize, t: f64, r: f64, ok: bool) -> QueryRecord {
        QueryRecord {
            query_id: id,
            truth: Pose::identity(),
            estimate: ok.then(Pose::identity),
            tx_err_m: if ok { t } else { f64::INFINITY },
            rot_err_deg: if ok { r } else { f64::INFINITY },
            wall_ms: 3,
            status: if ok { QueryStatus::Ok } else { QueryStatus::Failed },
            failure: None,
            confidence_sum: 0.0,
            uncertainty_sum: 0.0,
            outliers_kept: None,
            diagnostics: vec![],
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn recall_needs_both_thresholds() {
        let r = vec![
            rec(0, 0.01, 1.0, true),
            rec(1, 0.01, 3.0, true),
            rec(2, 0.03, 1.0, true),
            rec(3, 0.0, 0.0, false),
        ];
        assert_eq!(recall(&r, 0.02, 2.0), 0.25);
        assert_eq!(recall(&r, 0.05, 5.0), 0.75);
        let m = summarize(&r);
        assert_eq!(m.failures, 1);
        assert!(m.valid);
        assert_eq!(m.median_translation_m, Some(0.01));
    }

    #[test]
    fn mostly_failed_runs_are_flagged() {
        let r = vec![rec(0, 0.01, 1.0, true), rec(1, 0.0, 0.0, false)];
        assert!(!summarize(&r).valid);
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let r = vec![rec(1, 0.25, 1.5, true), rec(0, 0.0, 0.0, false)];
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "query_id,tx_err_m,rot_err_deg,wall_ms,status");
        assert_eq!(text.lines().nth(1).unwrap(), "0,inf,inf,3,failed");
        let rows = read_csv(&text).unwrap();
        assert_eq!(rows[1].tx_err_m, 0.25);
        assert_eq!(rows[0].status, "failed");
    }

    proptest! {
        #[test]
        fn report_medians_match_csv_recomputation(errs in prop::collection::vec((0.0f64..1.0, 0.0f64..10.0, prop::bool::weighted(0.9)), 1..40)) {
            let records: Vec<QueryRecord> = errs.iter().enumerate().map(|(i, (t, r, ok))| rec(i, *t, *r, *ok)).collect();
            let m = summarize(&records);
            let mut buf = Vec::new();
            write_csv(&records, &mut buf).unwrap();
            let rows = read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
            let mut t: Vec<f64> = rows.iter().filter(|r| r.status == "ok").map(|r| r.tx_err_m).collect();
            t.sort_by(f64::total_cmp);
            let brute = if t.is_empty() { None } else if t.len() % 2 == 1 { Some(t[t.len() / 2]) } else { Some((t[t.len() / 2 - 1] + t[t.len() / 2]) / 2.0) };
            prop_assert_eq!(m.median_translation_m, brute);
            prop_assert!(m.recall_5cm_5deg >= m.recall_2cm_2deg);
            prop_assert!((0.0..=1.0).contains(&m.recall_2cm_2deg));
        }
    }
}
