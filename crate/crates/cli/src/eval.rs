//! Standalone scoring: candidates and references as token-id text files,
//! one sequence per line, references with `|`-separated alternatives.

use std::path::Path;

use anyhow::{bail, Context, Result};

use ugsd_core::evalmetrics::{corpus_score, Metric, ScoredPair};
use ugsd_core::{TokenId, Transcript};

fn parse_sequence(text: &str, file: &str, line_no: usize) -> Result<Transcript> {
    let tokens: Vec<TokenId> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<u32>()
                .map(TokenId)
                .with_context(|| format!("{file}:{line_no}: bad token id {tok:?}"))
        })
        .collect::<Result<_>>()?;
    if tokens.is_empty() {
        bail!("{file}:{line_no}: empty sequence");
    }
    Ok(Transcript::from_tokens(tokens, true))
}

pub fn load_pairs(candidates_path: &Path, references_path: &Path) -> Result<Vec<ScoredPair>> {
    let cand_name = candidates_path.display().to_string();
    let ref_name = references_path.display().to_string();
    let cand_text =
        std::fs::read_to_string(candidates_path).with_context(|| format!("reading {cand_name}"))?;
    let ref_text =
        std::fs::read_to_string(references_path).with_context(|| format!("reading {ref_name}"))?;
    let cand_lines: Vec<&str> = cand_text.lines().collect();
    let ref_lines: Vec<&str> = ref_text.lines().collect();
    if cand_lines.len() != ref_lines.len() {
        bail!(
            "{cand_name} has {} lines but {ref_name} has {}",
            cand_lines.len(),
            ref_lines.len()
        );
    }
    if cand_lines.is_empty() {
        bail!("{cand_name} is empty");
    }
    cand_lines
        .iter()
        .zip(&ref_lines)
        .enumerate()
        .map(|(i, (cand, refs))| {
            let line_no = i + 1;
            let candidate = parse_sequence(cand, &cand_name, line_no)?;
            let references: Vec<Transcript> = refs
                .split('|')
                .map(|alt| parse_sequence(alt, &ref_name, line_no))
                .collect::<Result<_>>()?;
            Ok(ScoredPair::new(candidate, references))
        })
        .collect()
}

pub fn cmd_eval(candidates: &Path, references: &Path) -> Result<String> {
    let pairs = load_pairs(candidates, references)?;
    let mut out = String::from("metric,value\n");
    for (name, metric) in [
        ("bleu1", Metric::Bleu { max_n: 1 }),
        ("bleu4", Metric::Bleu { max_n: 4 }),
        ("rouge_l", Metric::RougeL),
    ] {
        let score = corpus_score(&pairs, metric).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        out.push_str(&format!("{name},{}\n", score * 100.0));
    }
    Ok(out)
}
