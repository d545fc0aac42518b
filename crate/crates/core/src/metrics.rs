//! Per-session function-call counts, call sequences, time, tokens, and cost.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::llm::TokenLedger;
use crate::session::CallRecord;

/// USD per token: $0.0101 for a 115,295.73-token session.
pub const DEFAULT_PRICE_PER_TOKEN_USD: f64 = 0.000_000_087_6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub call_counts: BTreeMap<String, u64>,
    pub call_sequence: Vec<String>,
    pub wall_time_s: f64,
    pub total_tokens: u64,
    pub estimated_cost_usd: f64,
}

pub fn record(call_log: &[CallRecord], ledger: &TokenLedger, wall_time_s: f64, price_per_token: f64) -> SessionMetrics {
    let mut call_counts = BTreeMap::new();
    let mut call_sequence = Vec::with_capacity(call_log.len());
    for call in call_log {
        *call_counts.entry(call.name.clone()).or_insert(0) += 1;
        call_sequence.push(call.name.clone());
    }
    let total_tokens = ledger.cumulative_total();
    SessionMetrics {
        call_counts,
        call_sequence,
        wall_time_s,
        total_tokens,
        estimated_cost_usd: total_tokens as f64 * price_per_token,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sessions: usize,
    /// Mean calls per issue; a function a session never called counts as 0.
    pub mean_calls: BTreeMap<String, f64>,
    pub median_wall_time_s: f64,
    pub median_tokens: f64,
    pub median_cost_usd: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

pub fn aggregate(sessions: &[SessionMetrics]) -> MetricsSummary {
    if sessions.is_empty() {
        return MetricsSummary::default();
    }
    let n = sessions.len() as f64;
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for s in sessions {
        for (name, count) in &s.call_counts {
            *totals.entry(name.clone()).or_insert(0) += count;
        }
    }
    let pick = |f: fn(&SessionMetrics) -> f64| median(&sessions.iter().map(f).collect::<Vec<_>>());
    MetricsSummary {
        sessions: sessions.len(),
        mean_calls: totals.into_iter().map(|(k, v)| (k, v as f64 / n)).collect(),
        median_wall_time_s: pick(|s| s.wall_time_s),
        median_tokens: pick(|s| s.total_tokens as f64),
        median_cost_usd: pick(|s| s.estimated_cost_usd),
    }
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(out: &mut impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
