//! Full experiment: decode every utterance under the configured strategy,
//! then write transcripts, traces, the efficiency CSV, and the quality CSV.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use ugsd_core::evalmetrics::{corpus_score, Metric, ScoredPair, ROUGE_BETA};
use ugsd_core::protocol::{
    edge_run_session, CloudService, EdgeSessionConfig, InProcessTransport, SessionRun, TcpTransport,
};
use ugsd_core::seed::derive_seed;
use ugsd_core::simtime::{
    aggregate_reports, metrics_csv_row, replay, DecodeTrace, MetricsReport, METRICS_CSV_HEADER,
};
use ugsd_core::GateConfig;

use crate::config::RunConfig;
use crate::workload::Workload;

pub struct RunOutcome {
    pub runs: Vec<(String, SessionRun)>,
    pub reports: Vec<MetricsReport>,
    pub aggregate: MetricsReport,
    pub quality: Vec<(String, f64)>,
}

/// Deterministic UUID-formatted session id from the run seed and utterance.
fn session_id(seed: u64, source_id: &str) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &format!("session:{source_id}")));
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

/// Decodes the whole workload and scores it. Sessions run in utterance
/// order; everything is a pure function of (config, seed) on the in-process
/// transport.
pub fn execute(cfg: &RunConfig, workload: &Workload) -> Result<RunOutcome> {
    let lengths = cfg.length_config()?;
    let gate = GateConfig::new(cfg.gamma).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let service = match cfg.transport.as_str() {
        "inprocess" => Some(Arc::new(CloudService::new(workload.verifier.clone()))),
        _ => None,
    };
    let mut runs = Vec::with_capacity(workload.utterances.len());
    for utt in &workload.utterances {
        let source_id = utt.features().source_id().to_string();
        let session_cfg = EdgeSessionConfig {
            session_id: session_id(cfg.seed, &source_id),
            gate,
            rank_threshold: cfg.rank_threshold,
            lengths,
            max_tokens: cfg.max_tokens,
            sampling: ugsd_core::edge::DraftSampling::Greedy,
            sampling_seed: derive_seed(cfg.seed, &format!("sampling:{source_id}")),
        };
        let run = match (&service, &cfg.stream_addr) {
            (Some(service), _) => {
                let mut transport = InProcessTransport::new(service.clone());
                edge_run_session(utt, workload.draft.as_ref(), &mut transport, &session_cfg)
            }
            (None, Some(addr)) => {
                let mut transport = TcpTransport::new(addr.clone());
                edge_run_session(utt, workload.draft.as_ref(), &mut transport, &session_cfg)
            }
            (None, None) => anyhow::bail!("stream transport without an address"),
        };
        if let Some(reason) = &run.aborted {
            anyhow::bail!("session {source_id} aborted: {reason}");
        }
        runs.push((source_id, run));
    }
    let reports: Vec<MetricsReport> = runs
        .iter()
        .map(|(_, r)| replay(&r.trace, &cfg.cost).map_err(|e| anyhow::anyhow!(e.to_string())))
        .collect::<Result<_>>()?;
    let traces: Vec<DecodeTrace> = runs.iter().map(|(_, r)| r.trace.clone()).collect();
    let aggregate = aggregate_reports(&reports, &traces).context("aggregating an empty run")?;
    let pairs: Vec<ScoredPair> = runs
        .iter()
        .zip(&workload.references)
        .map(|((_, run), reference)| {
            ScoredPair::new(run.transcript.clone(), vec![reference.clone()])
        })
        .collect();
    let quality = vec![
        (
            "bleu1".to_string(),
            corpus_score(&pairs, Metric::Bleu { max_n: 1 })
                .map_err(|e| anyhow::anyhow!(e.to_string()))?,
        ),
        (
            "bleu4".to_string(),
            corpus_score(&pairs, Metric::Bleu { max_n: 4 })
                .map_err(|e| anyhow::anyhow!(e.to_string()))?,
        ),
        (
            "rouge_l".to_string(),
            corpus_score(&pairs, Metric::RougeL).map_err(|e| anyhow::anyhow!(e.to_string()))?,
        ),
    ];
    Ok(RunOutcome {
        runs,
        reports,
        aggregate,
        quality,
    })
}

#[derive(Serialize)]
struct TranscriptRecord<'a> {
    source_id: &'a str,
    tokens: Vec<u32>,
    terminated: bool,
}

/// `metric,value` rows, scaled by 100 to match the usual table style, with
/// the pinned scoring parameters recorded as comment lines.
pub fn quality_csv(quality: &[(String, f64)]) -> String {
    let mut out = String::new();
    out.push_str("# scale=x100 bleu_smoothing=add1 rouge_beta=");
    out.push_str(&ROUGE_BETA.to_string());
    out.push_str("\nmetric,value\n");
    for (name, value) in quality {
        out.push_str(&format!("{name},{}\n", value * 100.0));
    }
    out
}

pub fn metrics_csv(outcome: &RunOutcome) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for ((source_id, _), report) in outcome.runs.iter().zip(&outcome.reports) {
        out.push_str(&metrics_csv_row(source_id, report));
        out.push('\n');
    }
    out.push_str(&metrics_csv_row("aggregate", &outcome.aggregate));
    out.push('\n');
    out
}

/// Writes transcripts.jsonl, traces/, metrics.csv, quality.csv.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir.join("traces"))?;
    let mut transcripts = String::new();
    for (source_id, run) in &outcome.runs {
        let record = TranscriptRecord {
            source_id,
            tokens: run.transcript.tokens().iter().map(|t| t.0).collect(),
            terminated: run.transcript.is_terminated(),
        };
        transcripts.push_str(&serde_json::to_string(&record)?);
        transcripts.push('\n');
        std::fs::write(
            dir.join("traces").join(format!("{source_id}.trace")),
            run.trace.to_ndjson(),
        )?;
    }
    std::fs::write(dir.join("transcripts.jsonl"), transcripts)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(outcome))?;
    std::fs::write(dir.join("quality.csv"), quality_csv(&outcome.quality))?;
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let workload = match (&cfg.benchmark_spec(), &cfg.bundle) {
        (Some(spec), None) => {
            Workload::write_bundle(spec, &cfg.output_dir.join("bundle"))?;
            Workload::generate(spec)?
        }
        (None, Some(dir)) => Workload::load_bundle(dir)?,
        _ => unreachable!("validated at load time"),
    };
    let outcome = execute(cfg, &workload)?;
    write_outputs(&cfg.output_dir, &outcome)?;
    eprintln!(
        "event=run_done utterances={} transport={} rho={:.4} total_ms={:.1} otps={:.3} bleu1={:.2} out={}",
        outcome.runs.len(),
        cfg.transport,
        outcome.aggregate.rho,
        outcome.aggregate.total_ms,
        outcome.aggregate.otps,
        outcome.quality[0].1 * 100.0,
        cfg.output_dir.display(),
    );
    Ok(())
}
