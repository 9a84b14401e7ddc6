//! A runnable workload: models plus utterances plus references, either
//! generated from a benchmark spec or loaded from a bundle directory.
//!
//! Bundle layout: `verifier.json` and `draft.json` (model snapshots),
//! `utterances.jsonl`, `references.jsonl`.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ugsd_core::bench::{generate_benchmark, BenchmarkSpec};
use ugsd_core::models::{ModelSnapshot, PerturbedModel};
use ugsd_core::{ConditioningFeatures, LanguageModel, TokenId, Transcript, UtteranceInput};

pub struct Workload {
    pub draft: Arc<dyn LanguageModel>,
    pub verifier: Arc<dyn LanguageModel>,
    pub utterances: Vec<UtteranceInput>,
    pub references: Vec<Transcript>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    source_id: String,
    raw_hex: String,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceRecord {
    source_id: String,
    tokens: Vec<u32>,
    terminated: bool,
}

impl Workload {
    pub fn generate(spec: &BenchmarkSpec) -> Result<Self> {
        let bench = generate_benchmark(spec).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok(Self {
            draft: bench.draft.clone(),
            verifier: bench.verifier.clone(),
            utterances: bench.utterances,
            references: bench.references,
        })
    }

    /// Writes the workload as a bundle. Requires the concrete generated
    /// models, so it runs on the generation path only.
    pub fn write_bundle(spec: &BenchmarkSpec, dir: &Path) -> Result<()> {
        let bench = generate_benchmark(spec).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        std::fs::create_dir_all(dir)?;
        bench
            .verifier
            .to_snapshot()
            .save(&dir.join("verifier.json"))
            .context("writing verifier snapshot")?;
        PerturbedModel::snapshot_over_ngram(
            &bench.verifier,
            spec.draft_temperature,
            spec.draft_noise_scale,
            spec.draft_seed,
        )
        .save(&dir.join("draft.json"))
        .context("writing draft snapshot")?;
        let mut utterances = String::new();
        for u in &bench.utterances {
            let record = UtteranceRecord {
                source_id: u.features().source_id().to_string(),
                raw_hex: hex_encode(u.raw()),
                features: u.features().values().to_vec(),
            };
            utterances.push_str(&serde_json::to_string(&record)?);
            utterances.push('\n');
        }
        std::fs::write(dir.join("utterances.jsonl"), utterances)?;
        let mut references = String::new();
        for (u, r) in bench.utterances.iter().zip(&bench.references) {
            let record = ReferenceRecord {
                source_id: u.features().source_id().to_string(),
                tokens: r.tokens().iter().map(|t| t.0).collect(),
                terminated: r.is_terminated(),
            };
            references.push_str(&serde_json::to_string(&record)?);
            references.push('\n');
        }
        std::fs::write(dir.join("references.jsonl"), references)?;
        Ok(())
    }

    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let verifier = ModelSnapshot::load(&dir.join("verifier.json"))
            .and_then(|s| s.instantiate())
            .with_context(|| format!("loading verifier snapshot from {}", dir.display()))?;
        let draft = ModelSnapshot::load(&dir.join("draft.json"))
            .and_then(|s| s.instantiate())
            .with_context(|| format!("loading draft snapshot from {}", dir.display()))?;
        let utt_text = std::fs::read_to_string(dir.join("utterances.jsonl"))?;
        let mut utterances = Vec::new();
        for (i, line) in utt_text.lines().enumerate() {
            let record: UtteranceRecord = serde_json::from_str(line)
                .with_context(|| format!("utterances.jsonl line {}", i + 1))?;
            let features = ConditioningFeatures::new(record.features, record.source_id)
                .map_err(|e| anyhow::anyhow!(e.to_string()))?;
            utterances.push(UtteranceInput::new(hex_decode(&record.raw_hex)?, features));
        }
        let ref_text = std::fs::read_to_string(dir.join("references.jsonl"))?;
        let mut references = Vec::new();
        for (i, line) in ref_text.lines().enumerate() {
            let record: ReferenceRecord = serde_json::from_str(line)
                .with_context(|| format!("references.jsonl line {}", i + 1))?;
            references.push(Transcript::from_tokens(
                record.tokens.into_iter().map(TokenId).collect(),
                record.terminated,
            ));
        }
        anyhow::ensure!(
            utterances.len() == references.len(),
            "bundle has {} utterances but {} references",
            utterances.len(),
            references.len()
        );
        Ok(Self {
            draft,
            verifier,
            utterances,
            references,
        })
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(text: &str) -> Result<Vec<u8>> {
    anyhow::ensure!(text.len().is_multiple_of(2), "odd-length hex payload");
    (0..text.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&text[i..i + 2], 16).context("bad hex payload"))
        .collect()
}
