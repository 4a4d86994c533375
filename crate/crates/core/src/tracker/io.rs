//! Scan JSON-lines input and tracker JSON output.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Hypothesis, Measurement, Scan};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRecord {
    pos: [f64; 2],
    cov: [[f64; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    type_lik: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScanRecord {
    t: f64,
    measurements: Vec<MeasurementRecord>,
}

/// One scan per line; blank lines are skipped.
pub fn read_scans<R: BufRead>(reader: R) -> Result<Vec<Scan>> {
    let mut scans = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScanRecord = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("scan line {}: {e}", n + 1)))?;
        let mut scan = Scan::from_measurements(
            rec.t,
            rec.measurements
                .iter()
                .map(|m| Measurement::new(rec.t, m.pos, m.cov))
                .collect(),
        );
        scan.type_likelihoods = rec.measurements.into_iter().map(|m| m.type_lik).collect();
        scan.validate()
            .map_err(|e| Error::input(format!("scan line {}: {e}", n + 1)))?;
        if let Some(prev) = scans.last().map(|s: &Scan| s.t) {
            if scan.t < prev {
                return Err(Error::input(format!(
                    "scan line {}: time goes backwards",
                    n + 1
                )));
            }
        }
        scans.push(scan);
    }
    Ok(scans)
}

pub fn write_scans<W: Write>(mut writer: W, scans: &[Scan]) -> Result<()> {
    for scan in scans {
        let rec = ScanRecord {
            t: scan.t,
            measurements: scan
                .measurements
                .iter()
                .zip(&scan.type_likelihoods)
                .map(|(m, lik)| MeasurementRecord {
                    pos: [m.pos[0], m.pos[1]],
                    cov: [
                        [m.cov[(0, 0)], m.cov[(0, 1)]],
                        [m.cov[(1, 0)], m.cov[(1, 1)]],
                    ],
                    type_lik: lik.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Track id with its `(scan, measurement)` entries.
pub type AssignmentHistory = (String, Vec<(usize, Option<usize>)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub scan: usize,
    pub t: f64,
    pub measurement: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPoint {
    pub t: f64,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub id: String,
    pub active: bool,
    pub history: Vec<HistoryEntry>,
    pub llr_kinematic: f64,
    pub llr_type: f64,
    pub llr_behavior: f64,
    pub llr_total: f64,
    pub behavior_posterior: Vec<f64>,
    pub behavior_trace: Vec<BehaviorPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_posterior: Vec<f64>,
    pub final_state: [f64; 4],
    pub degenerate_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerOutput {
    pub behavior_classes: Vec<String>,
    pub score: f64,
    pub prior_terms: f64,
    /// Best hypothesis score after every scan.
    pub best_scores: Vec<f64>,
    pub tracks: Vec<TrackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl TrackerOutput {
    pub fn from_hypothesis(
        hyp: &Hypothesis,
        scan_times: &[f64],
        behavior_classes: Vec<String>,
        best_scores: Vec<f64>,
    ) -> Self {
        let tracks = hyp
            .tracks
            .iter()
            .map(|tr| {
                let x = tr.state.estimate();
                TrackReport {
                    id: tr.id.to_string(),
                    active: tr.active,
                    history: tr
                        .history
                        .iter()
                        .map(|&(k, j)| HistoryEntry {
                            scan: k,
                            t: scan_times.get(k).copied().unwrap_or(f64::NAN),
                            measurement: j,
                        })
                        .collect(),
                    llr_kinematic: tr.llr_kinematic,
                    llr_type: tr.llr_type,
                    llr_behavior: tr.llr_behavior,
                    llr_total: tr.total_llr(),
                    behavior_posterior: tr.behavior_posterior.clone(),
                    behavior_trace: tr
                        .behavior_trace
                        .iter()
                        .map(|(t, p)| BehaviorPoint {
                            t: *t,
                            posterior: p.clone(),
                        })
                        .collect(),
                    type_posterior: tr.type_posterior.clone(),
                    final_state: [x[0], x[1], x[2], x[3]],
                    degenerate_updates: tr.degenerate_updates,
                }
            })
            .collect();
        Self {
            behavior_classes,
            score: hyp.score,
            prior_terms: hyp.prior_terms,
            best_scores,
            tracks,
            meta: None,
        }
    }

    /// Measurement indices per track, in track order, for comparing runs.
    pub fn assignment_histories(&self) -> Vec<AssignmentHistory> {
        self.tracks
            .iter()
            .map(|t| {
                (
                    t.id.clone(),
                    t.history.iter().map(|h| (h.scan, h.measurement)).collect(),
                )
            })
            .collect()
    }
}
