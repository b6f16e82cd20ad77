//! Run metrics: the JSON report a simulation emits, the height-over-time
//! series, and stall detection over that series.
//!
//! Reports round-trip through serde so a run can be archived and compared
//! later. The series is plain two-column CSV. A stall is a span where the
//! chain's high-water height fails to advance for longer than a threshold;
//! rollbacks make the raw height dip, so only new maxima count as progress.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("report JSON: {0}")]
    Json(String),
    #[error("series line {line}: {why}")]
    Series { line: usize, why: String },
}

/// One observation of the canonical chain height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightSample {
    pub t_us: u64,
    pub height: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallWindow {
    pub start_us: u64,
    pub end_us: u64,
}

impl StallWindow {
    pub fn len_us(&self) -> u64 {
        self.end_us.saturating_sub(self.start_us)
    }
}

/// A competing chain tip at the end of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkSummary {
    pub tip: String,
    pub height: u64,
    pub weight: u64,
    pub canonical: bool,
}

/// Everything a finished run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub shard_count: u32,
    pub duration_us: u64,

    pub final_height: u64,
    pub canonical_tip: String,
    pub blocks_finalized: u64,

    pub rollbacks: u64,
    pub challenges: u64,
    pub rejected_candidates: u64,
    pub proof_retries: u64,

    pub txs_submitted: u64,
    pub txs_applied: u64,
    pub txs_rejected: u64,
    pub receipts_applied: u64,

    pub modeled_tps: f64,
    pub measured_tps: f64,
    pub producer_stage_us: u64,
    pub gv_serial_us: u64,
    pub steady_interval_us: u64,
    pub pipeline_ok: bool,
    /// Mean gap between consecutive finalized blocks after warmup, if any.
    pub measured_interval_us: Option<f64>,

    pub stall_threshold_us: u64,
    pub stall_total_us: u64,
    pub longest_stall_us: u64,
    pub stall_windows: Vec<StallWindow>,

    pub trust: BTreeMap<String, u64>,
    pub rewards: BTreeMap<String, u64>,
    pub forks: Vec<ForkSummary>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(text).map_err(|e| MetricsError::Json(e.to_string()))
    }
}

/// Render the height series as CSV with a header row.
pub fn render_series(samples: &[HeightSample]) -> String {
    let mut out = String::from("t_us,height\n");
    for s in samples {
        writeln!(out, "{},{}", s.t_us, s.height).expect("string write");
    }
    out
}

/// Parse a series produced by [`render_series`].
pub fn parse_series(text: &str) -> Result<Vec<HeightSample>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "t_us,height")) => {}
        _ => {
            return Err(MetricsError::Series { line: 1, why: "missing t_us,height header".into() })
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (t, h) = line.split_once(',').ok_or_else(|| MetricsError::Series {
            line: i + 1,
            why: "expected two comma-separated fields".into(),
        })?;
        let parse = |s: &str, what: &str| {
            s.trim().parse::<u64>().map_err(|e| MetricsError::Series {
                line: i + 1,
                why: format!("bad {what}: {e}"),
            })
        };
        samples.push(HeightSample { t_us: parse(t, "time")?, height: parse(h, "height")? });
    }
    Ok(samples)
}

/// Find spans where the high-water height stayed flat longer than
/// `threshold_us`. The scan starts from height 0 at time 0 and the final
/// flat span runs to `duration_us`.
pub fn compute_stalls(
    samples: &[HeightSample],
    duration_us: u64,
    threshold_us: u64,
) -> Vec<StallWindow> {
    let mut windows = Vec::new();
    let mut high_water = 0u64;
    let mut last_progress = 0u64;
    let note = |from: u64, to: u64, windows: &mut Vec<StallWindow>| {
        if to.saturating_sub(from) > threshold_us {
            windows.push(StallWindow { start_us: from, end_us: to });
        }
    };
    for s in samples {
        if s.height > high_water {
            note(last_progress, s.t_us, &mut windows);
            high_water = s.height;
            last_progress = s.t_us;
        }
    }
    note(last_progress, duration_us, &mut windows);
    windows
}

pub fn stall_total_us(windows: &[StallWindow]) -> u64 {
    windows.iter().map(StallWindow::len_us).sum()
}

pub fn longest_stall_us(windows: &[StallWindow]) -> u64 {
    windows.iter().map(StallWindow::len_us).max().unwrap_or(0)
}
