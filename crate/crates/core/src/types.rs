//! Shared domain types: tokens, vocabularies, probability distributions,
//! conditioning features, and transcripts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for "entries sum to one" checks on distributions.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("weight vector is empty")]
    Empty,
    #[error("all weights are zero")]
    AllZero,
    #[error("weight at index {0} is not finite")]
    NonFinite(usize),
    #[error("weight at index {0} is negative")]
    Negative(usize),
    #[error("entries sum to {0}, not 1 within tolerance")]
    NotNormalized(f64),
    #[error("{labels} labels for a vocabulary of size {size}")]
    LabelCount { labels: usize, size: u32 },
    #[error("eos token {eos} outside vocabulary of size {size}")]
    EosOutOfRange { eos: u32, size: u32 },
    #[error("feature entry at index {0} is not finite")]
    NonFiniteFeature(usize),
}

/// Index into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// FNV-1a over a byte slice. Used for vocabulary checksums and seed
/// derivation; stable across platforms, unlike `DefaultHasher`.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A token id space of known size, with an end-of-sequence marker and an
/// optional human-readable label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    size: u32,
    labels: Option<Vec<String>>,
    eos: TokenId,
    checksum: u64,
}

impl Vocabulary {
    pub fn new(size: u32, eos: TokenId, labels: Option<Vec<String>>) -> Result<Self, CoreError> {
        if eos.0 >= size {
            return Err(CoreError::EosOutOfRange { eos: eos.0, size });
        }
        if let Some(ref l) = labels {
            if l.len() != size as usize {
                return Err(CoreError::LabelCount {
                    labels: l.len(),
                    size,
                });
            }
        }
        let checksum = Self::compute_checksum(size, eos, labels.as_deref());
        Ok(Self {
            size,
            labels,
            eos,
            checksum,
        })
    }

    fn compute_checksum(size: u32, eos: TokenId, labels: Option<&[String]>) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&size.to_le_bytes());
        bytes.extend_from_slice(&eos.0.to_le_bytes());
        match labels {
            None => bytes.push(0),
            Some(ls) => {
                bytes.push(1);
                for l in ls {
                    bytes.extend_from_slice(&(l.len() as u64).to_le_bytes());
                    bytes.extend_from_slice(l.as_bytes());
                }
            }
        }
        fnv1a64(&bytes)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn label(&self, token: TokenId) -> Option<&str> {
        self.labels.as_ref()?.get(token.index()).map(|s| s.as_str())
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token.0 < self.size
    }
}

/// Kahan-compensated sum. Distributions and entropies are compared at 1e-12
/// tolerances, which naive accumulation cannot honour at |V| = 10^4.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A dense, normalized probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Validates entries that are already (approximately) normalized.
    pub fn try_from_probs(probs: Vec<f64>) -> Result<Self, CoreError> {
        if probs.is_empty() {
            return Err(CoreError::Empty);
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(CoreError::NonFinite(i));
            }
            if p < 0.0 {
                return Err(CoreError::Negative(i));
            }
        }
        let sum = kahan_sum(probs.iter().copied());
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(CoreError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero tokens");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, token: TokenId) -> Self {
        assert!(token.index() < n, "one-hot token outside vocabulary");
        let mut probs = vec![0.0; n];
        probs[token.index()] = 1.0;
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.probs[token.index()]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Rescales non-negative weights to sum to 1.
///
/// The division pass repeats until the compensated sum is exactly 1.0, so
/// normalizing an already-normalized vector returns it bit-identically.
pub fn normalize(weights: &[f64]) -> Result<ProbDist, CoreError> {
    if weights.is_empty() {
        return Err(CoreError::Empty);
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(CoreError::NonFinite(i));
        }
        if w < 0.0 {
            return Err(CoreError::Negative(i));
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(CoreError::AllZero);
    }
    let mut probs = weights.to_vec();
    for _ in 0..32 {
        let sum = kahan_sum(probs.iter().copied());
        if sum == 1.0 {
            break;
        }
        for p in &mut probs {
            *p /= sum;
        }
    }
    Ok(ProbDist { probs })
}

/// Smallest token id attaining the maximum probability.
pub fn argmax_token(dist: &ProbDist) -> TokenId {
    let mut best = 0usize;
    let mut best_p = dist.probs[0];
    for (i, &p) in dist.probs.iter().enumerate().skip(1) {
        if p > best_p {
            best = i;
            best_p = p;
        }
    }
    TokenId(best as u32)
}

/// The fixed-length real vector conditioning generation. This is the only
/// acoustic-side information that may cross the edge-cloud boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningFeatures {
    values: Vec<f64>,
    source_id: String,
}

impl ConditioningFeatures {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Result<Self, CoreError> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFiniteFeature(i));
            }
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

/// An utterance as it exists on the edge device: the raw payload plus the
/// features extracted from it. The raw bytes are edge-local only; protocol
/// tests assert they never appear in any transmitted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceInput {
    raw: Vec<u8>,
    features: ConditioningFeatures,
}

impl UtteranceInput {
    pub fn new(raw: Vec<u8>, features: ConditioningFeatures) -> Self {
        Self { raw, features }
    }

    pub fn raw(&self) -> &[u8] {
        &self.raw
    }

    pub fn features(&self) -> &ConditioningFeatures {
        &self.features
    }
}

/// An ordered token sequence plus a termination flag. `terminated` is true
/// iff the last token is eos or the session hit its length cap.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub(crate) tokens: Vec<TokenId>,
    pub(crate) terminated: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<TokenId>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Checks the eos placement rule: at most once, and only final.
    pub fn validate_eos(&self, vocab: &Vocabulary) -> bool {
        let eos = vocab.eos();
        self.tokens
            .iter()
            .enumerate()
            .all(|(i, &t)| t != eos || i + 1 == self.tokens.len())
    }
}
