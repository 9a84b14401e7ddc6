//! Grid sweeps over one axis of a base config, emitting a single combined
//! CSV with quality, efficiency, and transmission-rate columns per point.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;
use crate::run::execute;
use crate::workload::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Gamma,
    RankThreshold,
    BlockLength,
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(Self::Gamma),
            "r" | "rank" | "rank_threshold" => Ok(Self::RankThreshold),
            "l" | "length" => Ok(Self::BlockLength),
            other => bail!("unknown sweep axis {other:?} (expected gamma, r, or l)"),
        }
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "label,bleu1,bleu4,rouge_l,ttft_ms,itps,oet_ms,otps,total_ms,rho,output_tokens";

/// One grid point per value. `l` accepts integers or the word `dynamic`.
pub fn cmd_sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<String> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let workload = match (&base.benchmark_spec(), &base.bundle) {
        (Some(spec), None) => Workload::generate(spec)?,
        (None, Some(dir)) => Workload::load_bundle(dir)?,
        _ => unreachable!("validated at load time"),
    };
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for value in values {
        let mut cfg = base.clone();
        let label = match axis {
            SweepAxis::Gamma => {
                cfg.gamma = value
                    .parse::<f64>()
                    .with_context(|| format!("bad gamma value {value:?}"))?;
                format!("gamma={value}")
            }
            SweepAxis::RankThreshold => {
                cfg.rank_threshold = value
                    .parse::<u32>()
                    .with_context(|| format!("bad rank threshold {value:?}"))?;
                format!("r={value}")
            }
            SweepAxis::BlockLength => {
                if value.eq_ignore_ascii_case("dynamic") {
                    cfg.lengths.fixed = None;
                } else {
                    cfg.lengths.fixed = Some(
                        value
                            .parse::<usize>()
                            .with_context(|| format!("bad block length {value:?}"))?,
                    );
                }
                format!("l={value}")
            }
        };
        cfg.validate()?;
        let outcome = execute(&cfg, &workload)?;
        let a = &outcome.aggregate;
        out.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{},{}\n",
            outcome.quality[0].1 * 100.0,
            outcome.quality[1].1 * 100.0,
            outcome.quality[2].1 * 100.0,
            a.ttft_ms,
            a.itps,
            a.oet_ms,
            a.otps,
            a.total_ms,
            a.rho,
            a.output_token_count,
        ));
        eprintln!(
            "event=sweep_point {label} rho={:.4} total_ms={:.1}",
            a.rho, a.total_ms
        );
    }
    Ok(out)
}

pub fn write_or_print(csv: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
