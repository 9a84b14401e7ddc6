//! Deterministic latency and throughput accounting. A decode run leaves an
//! event trace; `replay` advances a virtual clock over it under a
//! parameterized cost model, yielding the standard efficiency metrics
//! without touching a wall clock.
//!
//! Pinned metric definitions:
//! - TTFT: clock at the first commit event.
//! - ITPS: input tokens / prefill seconds (0 with a degenerate flag when
//!   prefill is free).
//! - OET: clock at the last commit minus clock at the first commit.
//! - OTPS: output tokens / OET seconds. Single-instant outputs fall back to
//!   one edge decode step and are flagged degenerate; 0 if that is also
//!   free.
//! - total: clock at the terminate event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
}

/// One step of a decode run, in causal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceEvent {
    /// The draft model produced the token at this transcript index.
    DraftToken { index: usize },
    /// The gate looked at a finished block.
    GateDecision { escalated: bool },
    /// One frame left the edge.
    Send { bytes: usize },
    /// The cloud verified a block of this length.
    Verify { block_len: usize },
    /// One frame arrived from the cloud.
    Receive { bytes: usize },
    /// Tokens were appended to the committed transcript.
    Commit { count: usize },
    /// The session ended.
    Terminate,
}

/// Ordered event log of one decode, plus the input token count consumed at
/// prefill (here: the conditioning feature dimension).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeTrace {
    pub input_token_count: usize,
    pub events: Vec<TraceEvent>,
}

impl DecodeTrace {
    pub fn new(input_token_count: usize) -> Self {
        Self {
            input_token_count,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn output_tokens(&self) -> usize {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Commit { count } => *count,
                _ => 0,
            })
            .sum()
    }

    pub fn drafted_tokens(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::DraftToken { .. }))
            .count()
    }

    pub fn transmitted_tokens(&self) -> usize {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Verify { block_len } => *block_len,
                _ => 0,
            })
            .sum()
    }

    fn validate(&self) -> Result<(), TraceError> {
        let terminates = self
            .events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Terminate))
            .count();
        if terminates != 1 {
            return Err(TraceError::InvalidTrace(format!(
                "expected exactly one terminate event, found {terminates}"
            )));
        }
        if !matches!(self.events.last(), Some(TraceEvent::Terminate)) {
            return Err(TraceError::InvalidTrace(
                "terminate must be the final event".into(),
            ));
        }
        Ok(())
    }

    /// Newline-delimited serialization: a meta line, then one event per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = format!(
            "{}\n",
            serde_json::json!({ "input_token_count": self.input_token_count })
        );
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events always encode"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta_line = lines
            .next()
            .ok_or_else(|| TraceError::InvalidTrace("empty trace file".into()))?;
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Meta {
            input_token_count: usize,
        }
        let meta: Meta = serde_json::from_str(meta_line)
            .map_err(|e| TraceError::InvalidTrace(format!("bad meta line: {e}")))?;
        let mut trace = DecodeTrace::new(meta.input_token_count);
        for (i, line) in lines.enumerate() {
            let event: TraceEvent = serde_json::from_str(line).map_err(|e| {
                TraceError::InvalidTrace(format!("bad event at line {}: {e}", i + 2))
            })?;
            trace.push(event);
        }
        Ok(trace)
    }
}

/// Per-step costs of the virtual clock, all in milliseconds or bytes/ms. A
/// zero bandwidth means transfers are free, matching the all-zero degenerate
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub edge_prefill_ms_per_input_token: f64,
    pub edge_decode_ms_per_token: f64,
    pub cloud_verify_fixed_ms: f64,
    pub cloud_verify_ms_per_token: f64,
    pub network_rtt_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
}

impl CostModel {
    pub fn zero() -> Self {
        Self {
            edge_prefill_ms_per_input_token: 0.0,
            edge_decode_ms_per_token: 0.0,
            cloud_verify_fixed_ms: 0.0,
            cloud_verify_ms_per_token: 0.0,
            network_rtt_ms: 0.0,
            bandwidth_bytes_per_ms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let fields = [
            self.edge_prefill_ms_per_input_token,
            self.edge_decode_ms_per_token,
            self.cloud_verify_fixed_ms,
            self.cloud_verify_ms_per_token,
            self.network_rtt_ms,
            self.bandwidth_bytes_per_ms,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TraceError::InvalidTrace(
                "cost model fields must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    fn transfer_ms(&self, bytes: usize) -> f64 {
        if self.bandwidth_bytes_per_ms > 0.0 {
            bytes as f64 / self.bandwidth_bytes_per_ms
        } else {
            0.0
        }
    }
}

/// Efficiency metrics for one replayed trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ttft_ms: f64,
    pub itps: f64,
    pub oet_ms: f64,
    pub otps: f64,
    pub total_ms: f64,
    pub rho: f64,
    pub output_token_count: usize,
    /// True when a rate had to be guarded against a zero-length span.
    pub degenerate: bool,
}

/// Replays a trace against a cost model. Pure: identical inputs produce
/// bit-identical reports.
pub fn replay(trace: &DecodeTrace, cost: &CostModel) -> Result<MetricsReport, TraceError> {
    trace.validate()?;
    cost.validate()?;
    let prefill_ms = trace.input_token_count as f64 * cost.edge_prefill_ms_per_input_token;
    let mut clock = prefill_ms;
    let mut first_commit: Option<f64> = None;
    let mut last_commit: Option<f64> = None;
    let mut output_tokens = 0usize;
    let mut total_ms = prefill_ms;
    for event in &trace.events {
        match event {
            TraceEvent::DraftToken { .. } => clock += cost.edge_decode_ms_per_token,
            TraceEvent::GateDecision { .. } => {}
            TraceEvent::Send { bytes } => clock += cost.transfer_ms(*bytes),
            TraceEvent::Verify { block_len } => {
                clock += cost.cloud_verify_fixed_ms
                    + *block_len as f64 * cost.cloud_verify_ms_per_token
                    + cost.network_rtt_ms;
            }
            TraceEvent::Receive { bytes } => clock += cost.transfer_ms(*bytes),
            TraceEvent::Commit { count } => {
                if *count > 0 {
                    if first_commit.is_none() {
                        first_commit = Some(clock);
                    }
                    last_commit = Some(clock);
                    output_tokens += count;
                }
            }
            TraceEvent::Terminate => total_ms = clock,
        }
    }
    let ttft_ms = first_commit.unwrap_or(total_ms);
    let oet_ms = match (first_commit, last_commit) {
        (Some(f), Some(l)) => l - f,
        _ => 0.0,
    };
    let mut degenerate = false;
    let itps = if prefill_ms > 0.0 {
        trace.input_token_count as f64 / (prefill_ms / 1000.0)
    } else {
        0.0
    };
    let otps = if oet_ms > 0.0 {
        output_tokens as f64 / (oet_ms / 1000.0)
    } else {
        degenerate = true;
        let span = oet_ms.max(cost.edge_decode_ms_per_token);
        if span > 0.0 {
            output_tokens as f64 / (span / 1000.0)
        } else {
            0.0
        }
    };
    let rho = if trace.drafted_tokens() > 0 {
        trace.transmitted_tokens() as f64 / trace.drafted_tokens() as f64
    } else {
        0.0
    };
    Ok(MetricsReport {
        ttft_ms,
        itps,
        oet_ms,
        otps,
        total_ms,
        rho,
        output_token_count: output_tokens,
        degenerate,
    })
}

pub const METRICS_CSV_HEADER: &str = "label,ttft_ms,itps,oet_ms,otps,total_ms,rho,output_tokens";

pub fn metrics_csv_row(label: &str, report: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        label,
        report.ttft_ms,
        report.itps,
        report.oet_ms,
        report.otps,
        report.total_ms,
        report.rho,
        report.output_token_count
    )
}

/// Replays a labeled set of traces into rows of the shared CSV schema.
pub fn compare_configs(
    traces: &[(String, DecodeTrace)],
    cost: &CostModel,
) -> Result<Vec<(String, MetricsReport)>, TraceError> {
    traces
        .iter()
        .map(|(label, trace)| Ok((label.clone(), replay(trace, cost)?)))
        .collect()
}

pub fn comparison_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for (label, report) in rows {
        out.push_str(&metrics_csv_row(label, report));
        out.push('\n');
    }
    out
}

/// Aggregate view over many per-utterance reports: means for times, pooled
/// ratios for rates (total output over total OET, total transmitted over
/// total drafted), so slow sessions weigh in proportionally.
pub fn aggregate_reports(
    reports: &[MetricsReport],
    traces: &[DecodeTrace],
) -> Option<MetricsReport> {
    if reports.is_empty() || reports.len() != traces.len() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>();
    let output_total: usize = reports.iter().map(|r| r.output_token_count).sum();
    let oet_total = sum(|r| r.oet_ms);
    let prefill_total: f64 = traces
        .iter()
        .zip(reports)
        .map(|(t, r)| {
            if r.itps > 0.0 {
                t.input_token_count as f64 / r.itps * 1000.0
            } else {
                0.0
            }
        })
        .sum();
    let input_total: usize = traces.iter().map(|t| t.input_token_count).sum();
    let drafted_total: usize = traces.iter().map(|t| t.drafted_tokens()).sum();
    let transmitted_total: usize = traces.iter().map(|t| t.transmitted_tokens()).sum();
    let degenerate = oet_total <= 0.0;
    Some(MetricsReport {
        ttft_ms: sum(|r| r.ttft_ms) / n,
        itps: if prefill_total > 0.0 {
            input_total as f64 / (prefill_total / 1000.0)
        } else {
            0.0
        },
        oet_ms: oet_total / n,
        otps: if oet_total > 0.0 {
            output_total as f64 / (oet_total / 1000.0)
        } else {
            0.0
        },
        total_ms: sum(|r| r.total_ms) / n,
        rho: if drafted_total > 0 {
            transmitted_total as f64 / drafted_total as f64
        } else {
            0.0
        },
        output_token_count: output_total,
        degenerate,
    })
}
