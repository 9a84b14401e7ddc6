//! Run configuration: a TOML file plus flag overrides (flags win). Unknown
//! keys are rejected so sweeps cannot silently mutate a misspelled axis.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ugsd_core::adaptive::LengthConfig;
use ugsd_core::bench::BenchmarkSpec;
use ugsd_core::seed::derive_seed;
use ugsd_core::simtime::CostModel;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthsSection {
    pub l_min: usize,
    pub l_base: usize,
    pub l_max: usize,
    pub fixed: Option<usize>,
}

impl Default for LengthsSection {
    fn default() -> Self {
        Self {
            l_min: 3,
            l_base: 5,
            l_max: 7,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub vocab_size: u32,
    pub corpus_sentences: usize,
    pub ngram_order: usize,
    pub alpha: f64,
    pub draft_temperature: f64,
    pub draft_noise_scale: f64,
    pub utterance_count: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_transport")]
    pub transport: String,
    pub stream_addr: Option<String>,
    pub gamma: f64,
    pub rank_threshold: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub lengths: LengthsSection,
    pub benchmark: Option<BenchmarkSection>,
    pub bundle: Option<PathBuf>,
    pub cost: CostModel,
}

fn default_transport() -> String {
    "inprocess".into()
}

fn default_max_tokens() -> usize {
    64
}

/// Flag overrides; every field beats the file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub rank_threshold: Option<u32>,
    pub fixed_l: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub transport: Option<String>,
    pub stream_addr: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(g) = overrides.gamma {
            cfg.gamma = g;
        }
        if let Some(r) = overrides.rank_threshold {
            cfg.rank_threshold = r;
        }
        if let Some(l) = overrides.fixed_l {
            cfg.lengths.fixed = Some(l);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(ref d) = overrides.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(ref t) = overrides.transport {
            cfg.transport = t.clone();
        }
        if let Some(ref a) = overrides.stream_addr {
            cfg.stream_addr = Some(a.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() {
            bail!("gamma must not be NaN");
        }
        if self.rank_threshold < 1 {
            bail!("rank_threshold must be >= 1");
        }
        if self.max_tokens == 0 {
            bail!("max_tokens must be >= 1");
        }
        match self.transport.as_str() {
            "inprocess" => {}
            "stream" => {
                if self.stream_addr.is_none() {
                    bail!("transport = \"stream\" requires stream_addr");
                }
            }
            other => bail!("unknown transport {other:?} (expected inprocess or stream)"),
        }
        match (&self.benchmark, &self.bundle) {
            (Some(_), Some(_)) => bail!("config sets both [benchmark] and bundle; pick one"),
            (None, None) => bail!("config needs either a [benchmark] section or a bundle path"),
            _ => {}
        }
        self.length_config()?;
        self.cost
            .validate()
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok(())
    }

    pub fn length_config(&self) -> Result<LengthConfig> {
        let l = &self.lengths;
        let cfg = match l.fixed {
            Some(k) => LengthConfig::fixed(k),
            None => LengthConfig::adaptive(l.l_min, l.l_base, l.l_max),
        };
        cfg.map_err(|e| anyhow::anyhow!(e.to_string()))
    }

    /// Benchmark spec with seeds derived from the run seed through named
    /// sub-streams.
    pub fn benchmark_spec(&self) -> Option<BenchmarkSpec> {
        self.benchmark.as_ref().map(|b| BenchmarkSpec {
            vocab_size: b.vocab_size,
            corpus_seed: derive_seed(self.seed, "corpus"),
            corpus_sentences: b.corpus_sentences,
            ngram_order: b.ngram_order,
            alpha: b.alpha,
            draft_temperature: b.draft_temperature,
            draft_noise_scale: b.draft_noise_scale,
            draft_seed: derive_seed(self.seed, "draft"),
            utterance_count: b.utterance_count,
            max_tokens: self.max_tokens,
            feature_dim: b.feature_dim,
        })
    }
}
