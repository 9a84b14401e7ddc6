//! The language-model abstraction both engines decode against, plus
//! deterministic toy implementations standing in for the edge draft model
//! and the cloud verifier.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{hash_str, mix_seed};
use crate::types::{
    argmax_token, normalize, ConditioningFeatures, CoreError, ProbDist, TokenId, Transcript,
    Vocabulary,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} outside vocabulary of size {size}")]
    VocabMismatch { token: u32, size: u32 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
    #[error("smoothing alpha must be > 0")]
    InvalidAlpha,
    #[error("temperature must be > 0 and finite")]
    InvalidTemperature,
    #[error("noise scale must be >= 0 and finite")]
    InvalidNoiseScale,
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad snapshot document: {0}")]
    Format(#[from] serde_json::Error),
    #[error("snapshot rejected: {0}")]
    Invalid(String),
}

/// A conditional token-probability model.
///
/// `score_block` must equal teacher-forced sequential `next_dist` calls
/// exactly: `score_block(prefix, f, draft)[k] == next_dist(prefix ++
/// draft[..k], f)`. Implementations may compute it in one pass; the equality
/// is a semantic contract, not an efficiency one.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn next_dist(
        &self,
        prefix: &[TokenId],
        features: &ConditioningFeatures,
    ) -> Result<ProbDist, ModelError>;

    fn score_block(
        &self,
        prefix: &[TokenId],
        features: &ConditioningFeatures,
        draft: &[TokenId],
    ) -> Result<Vec<ProbDist>, ModelError> {
        let mut ctx = prefix.to_vec();
        let mut out = Vec::with_capacity(draft.len());
        for &t in draft {
            out.push(self.next_dist(&ctx, features)?);
            ctx.push(t);
        }
        Ok(out)
    }
}

fn check_tokens(tokens: &[TokenId], vocab: &Vocabulary) -> Result<(), ModelError> {
    for &t in tokens {
        if !vocab.contains(t) {
            return Err(ModelError::VocabMismatch {
                token: t.0,
                size: vocab.size(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Add-alpha n-gram model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct ContextCounts {
    per_token: Vec<u64>,
    total: u64,
}

/// Order-n model with add-alpha smoothing. Contexts shorter than n-1 occur
/// naturally at sequence starts; unseen contexts emit the uniform add-alpha
/// distribution.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    alpha: f64,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

/// Fits an n-gram model on a corpus. Each position i contributes one count
/// under its context of length min(order-1, i). Emitted probabilities are
/// (count + alpha) / (total + alpha * |V|).
pub fn ngram_fit(
    corpus: &[Transcript],
    order: usize,
    alpha: f64,
    vocab: &Vocabulary,
) -> Result<NGramModel, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if order < 1 {
        return Err(ModelError::InvalidOrder);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ModelError::InvalidAlpha);
    }
    let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
    let v = vocab.size() as usize;
    for transcript in corpus {
        let tokens = transcript.tokens();
        check_tokens(tokens, vocab)?;
        for (i, &tok) in tokens.iter().enumerate() {
            let ctx_len = (order - 1).min(i);
            let ctx = tokens[i - ctx_len..i].to_vec();
            let entry = counts.entry(ctx).or_insert_with(|| ContextCounts {
                per_token: vec![0; v],
                total: 0,
            });
            entry.per_token[tok.index()] += 1;
            entry.total += 1;
        }
    }
    Ok(NGramModel {
        vocab: vocab.clone(),
        order,
        alpha,
        counts,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn dist_for_context(&self, prefix: &[TokenId]) -> ProbDist {
        let v = self.vocab.size() as usize;
        let ctx_len = (self.order - 1).min(prefix.len());
        let ctx = &prefix[prefix.len() - ctx_len..];
        let denom_of = |total: u64| total as f64 + self.alpha * v as f64;
        let probs = match self.counts.get(ctx) {
            Some(c) => {
                let denom = denom_of(c.total);
                c.per_token
                    .iter()
                    .map(|&n| (n as f64 + self.alpha) / denom)
                    .collect()
            }
            None => vec![self.alpha / denom_of(0); v],
        };
        ProbDist::try_from_probs(probs).expect("add-alpha distribution is always valid")
    }
}

impl LanguageModel for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_dist(
        &self,
        prefix: &[TokenId],
        _features: &ConditioningFeatures,
    ) -> Result<ProbDist, ModelError> {
        check_tokens(prefix, &self.vocab)?;
        Ok(self.dist_for_context(prefix))
    }

    fn score_block(
        &self,
        prefix: &[TokenId],
        _features: &ConditioningFeatures,
        draft: &[TokenId],
    ) -> Result<Vec<ProbDist>, ModelError> {
        check_tokens(prefix, &self.vocab)?;
        check_tokens(draft, &self.vocab)?;
        let mut ctx = prefix.to_vec();
        let mut out = Vec::with_capacity(draft.len());
        for &t in draft {
            out.push(self.dist_for_context(&ctx));
            ctx.push(t);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Perturbed model
// ---------------------------------------------------------------------------

/// Tempering plus seeded multiplicative noise over a base model. Models the
/// capacity gap between a small draft model and a strong verifier while
/// staying bit-reproducible.
///
/// Noise is drawn from a counter-based stream keyed by (seed, source id,
/// effective prefix length), so calls are order-independent and the
/// teacher-forcing contract of `score_block` holds exactly.
pub struct PerturbedModel {
    base: Arc<dyn LanguageModel>,
    temperature: f64,
    noise_scale: f64,
    seed: u64,
}

/// Applies p^(1/temperature), then a log-normal multiplicative factor
/// exp(noise_scale * z) per entry, then renormalizes. The identity
/// configuration (temperature 1, noise 0) returns the input unchanged.
pub fn perturb_dist(
    base: &ProbDist,
    temperature: f64,
    noise_scale: f64,
    rng: &mut impl Rng,
) -> Result<ProbDist, ModelError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ModelError::InvalidTemperature);
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(ModelError::InvalidNoiseScale);
    }
    if temperature == 1.0 && noise_scale == 0.0 {
        return Ok(base.clone());
    }
    let max = base
        .probs()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let inv_t = 1.0 / temperature;
    // Dividing by the max before exponentiation keeps extreme temperatures
    // from underflowing the whole vector.
    let mut weights: Vec<f64> = base
        .probs()
        .iter()
        .map(|&p| (p / max).powf(inv_t))
        .collect();
    if noise_scale > 0.0 {
        for w in &mut weights {
            *w *= (noise_scale * standard_normal(rng)).exp();
        }
    }
    Ok(normalize(&weights)?)
}

/// Box-Muller draw; two uniforms in, one standard normal out.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl PerturbedModel {
    pub fn new(
        base: Arc<dyn LanguageModel>,
        temperature: f64,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ModelError::InvalidTemperature);
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(ModelError::InvalidNoiseScale);
        }
        Ok(Self {
            base,
            temperature,
            noise_scale,
            seed,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base(&self) -> &Arc<dyn LanguageModel> {
        &self.base
    }

    fn noise_rng(&self, features: &ConditioningFeatures, position: usize) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(mix_seed(&[
            self.seed,
            hash_str(features.source_id()),
            position as u64,
        ]))
    }

    fn perturb_at(
        &self,
        dist: &ProbDist,
        features: &ConditioningFeatures,
        position: usize,
    ) -> Result<ProbDist, ModelError> {
        let mut rng = self.noise_rng(features, position);
        perturb_dist(dist, self.temperature, self.noise_scale, &mut rng)
    }
}

impl LanguageModel for PerturbedModel {
    fn vocab(&self) -> &Vocabulary {
        self.base.vocab()
    }

    fn next_dist(
        &self,
        prefix: &[TokenId],
        features: &ConditioningFeatures,
    ) -> Result<ProbDist, ModelError> {
        let base = self.base.next_dist(prefix, features)?;
        self.perturb_at(&base, features, prefix.len())
    }

    fn score_block(
        &self,
        prefix: &[TokenId],
        features: &ConditioningFeatures,
        draft: &[TokenId],
    ) -> Result<Vec<ProbDist>, ModelError> {
        let base = self.base.score_block(prefix, features, draft)?;
        base.into_iter()
            .enumerate()
            .map(|(k, d)| self.perturb_at(&d, features, prefix.len() + k))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Table model
// ---------------------------------------------------------------------------

/// Explicit (prefix, source id) -> distribution map with a uniform fallback.
/// Golden-file test fixture; the one toy model that actually consumes the
/// conditioning features.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocabulary,
    entries: BTreeMap<(Vec<TokenId>, String), ProbDist>,
}

impl TableModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, prefix: Vec<TokenId>, source_id: impl Into<String>, dist: ProbDist) {
        assert_eq!(
            dist.len(),
            self.vocab.size() as usize,
            "table entry must match vocabulary size"
        );
        self.entries.insert((prefix, source_id.into()), dist);
    }
}

impl LanguageModel for TableModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_dist(
        &self,
        prefix: &[TokenId],
        features: &ConditioningFeatures,
    ) -> Result<ProbDist, ModelError> {
        check_tokens(prefix, &self.vocab)?;
        let key = (prefix.to_vec(), features.source_id().to_string());
        Ok(self
            .entries
            .get(&key)
            .cloned()
            .unwrap_or_else(|| ProbDist::uniform(self.vocab.size() as usize)))
    }
}

// ---------------------------------------------------------------------------
// Greedy decoding
// ---------------------------------------------------------------------------

/// Plain autoregressive argmax decoding, up to eos or `max_tokens`.
pub fn greedy_decode(
    model: &dyn LanguageModel,
    features: &ConditioningFeatures,
    max_tokens: usize,
) -> Result<Transcript, ModelError> {
    let eos = model.vocab().eos();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut terminated = false;
    while tokens.len() < max_tokens {
        let dist = model.next_dist(&tokens, features)?;
        let tok = argmax_token(&dist);
        tokens.push(tok);
        if tok == eos {
            terminated = true;
            break;
        }
    }
    if tokens.len() >= max_tokens {
        terminated = true;
    }
    Ok(Transcript::from_tokens(tokens, terminated))
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabSnapshot {
    size: u32,
    eos: u32,
    labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountEntry {
    context: Vec<u32>,
    counts: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKindSnapshot {
    Ngram {
        order: usize,
        alpha: f64,
        counts: Vec<CountEntry>,
    },
    Perturbed {
        temperature: f64,
        noise_scale: f64,
        seed: u64,
        base: Box<ModelKindSnapshot>,
    },
    Table {
        entries: Vec<TableEntrySnapshot>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntrySnapshot {
    prefix: Vec<u32>,
    source_id: String,
    probs: Vec<f64>,
}

/// Self-describing model document: kind, parameters, vocabulary, counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSnapshot {
    vocab: VocabSnapshot,
    model: ModelKindSnapshot,
}

impl NGramModel {
    fn kind_snapshot(&self) -> ModelKindSnapshot {
        let counts = self
            .counts
            .iter()
            .map(|(ctx, c)| CountEntry {
                context: ctx.iter().map(|t| t.0).collect(),
                counts: c
                    .per_token
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(i, &n)| (i as u32, n))
                    .collect(),
            })
            .collect();
        ModelKindSnapshot::Ngram {
            order: self.order,
            alpha: self.alpha,
            counts,
        }
    }

    pub fn to_snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            vocab: vocab_snapshot(&self.vocab),
            model: self.kind_snapshot(),
        }
    }
}

impl PerturbedModel {
    /// Snapshot of a perturbed model whose base is the given n-gram model.
    pub fn snapshot_over_ngram(
        base: &NGramModel,
        temperature: f64,
        noise_scale: f64,
        seed: u64,
    ) -> ModelSnapshot {
        ModelSnapshot {
            vocab: vocab_snapshot(&base.vocab),
            model: ModelKindSnapshot::Perturbed {
                temperature,
                noise_scale,
                seed,
                base: Box::new(base.kind_snapshot()),
            },
        }
    }
}

impl TableModel {
    pub fn to_snapshot(&self) -> ModelSnapshot {
        let entries = self
            .entries
            .iter()
            .map(|((prefix, source_id), dist)| TableEntrySnapshot {
                prefix: prefix.iter().map(|t| t.0).collect(),
                source_id: source_id.clone(),
                probs: dist.probs().to_vec(),
            })
            .collect();
        ModelSnapshot {
            vocab: vocab_snapshot(&self.vocab),
            model: ModelKindSnapshot::Table { entries },
        }
    }
}

fn vocab_snapshot(v: &Vocabulary) -> VocabSnapshot {
    VocabSnapshot {
        size: v.size(),
        eos: v.eos().0,
        labels: v.labels().map(|l| l.to_vec()),
    }
}

impl ModelSnapshot {
    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        let doc = serde_json::to_string_pretty(self)?;
        std::fs::write(path, doc + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        let doc = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&doc)?)
    }

    /// Builds a live model from the document.
    pub fn instantiate(&self) -> Result<Arc<dyn LanguageModel>, SnapshotError> {
        let vocab = Vocabulary::new(
            self.vocab.size,
            TokenId(self.vocab.eos),
            self.vocab.labels.clone(),
        )
        .map_err(|e| SnapshotError::Invalid(e.to_string()))?;
        instantiate_kind(&self.model, &vocab)
    }
}

fn instantiate_kind(
    kind: &ModelKindSnapshot,
    vocab: &Vocabulary,
) -> Result<Arc<dyn LanguageModel>, SnapshotError> {
    match kind {
        ModelKindSnapshot::Ngram {
            order,
            alpha,
            counts,
        } => {
            if *order < 1 {
                return Err(SnapshotError::Invalid("order must be >= 1".into()));
            }
            if !alpha.is_finite() || *alpha <= 0.0 {
                return Err(SnapshotError::Invalid("alpha must be > 0".into()));
            }
            let v = vocab.size() as usize;
            let mut map = BTreeMap::new();
            for entry in counts {
                let ctx: Vec<TokenId> = entry.context.iter().map(|&t| TokenId(t)).collect();
                let mut per_token = vec![0u64; v];
                let mut total = 0u64;
                for &(tok, n) in &entry.counts {
                    if tok as usize >= v {
                        return Err(SnapshotError::Invalid(format!(
                            "count for token {tok} outside vocabulary"
                        )));
                    }
                    per_token[tok as usize] = n;
                    total += n;
                }
                map.insert(ctx, ContextCounts { per_token, total });
            }
            Ok(Arc::new(NGramModel {
                vocab: vocab.clone(),
                order: *order,
                alpha: *alpha,
                counts: map,
            }))
        }
        ModelKindSnapshot::Perturbed {
            temperature,
            noise_scale,
            seed,
            base,
        } => {
            let base = instantiate_kind(base, vocab)?;
            let model = PerturbedModel::new(base, *temperature, *noise_scale, *seed)
                .map_err(|e| SnapshotError::Invalid(e.to_string()))?;
            Ok(Arc::new(model))
        }
        ModelKindSnapshot::Table { entries } => {
            let mut table = TableModel::new(vocab.clone());
            for entry in entries {
                let dist = ProbDist::try_from_probs(entry.probs.clone())
                    .map_err(|e| SnapshotError::Invalid(e.to_string()))?;
                if dist.len() != vocab.size() as usize {
                    return Err(SnapshotError::Invalid(
                        "table distribution does not match vocabulary size".into(),
                    ));
                }
                table.insert(
                    entry.prefix.iter().map(|&t| TokenId(t)).collect(),
                    entry.source_id.clone(),
                    dist,
                );
            }
            Ok(Arc::new(table))
        }
    }
}
