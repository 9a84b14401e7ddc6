//! Cloud-side block verification: single-pass scoring, rank-based
//! acceptance, longest-accepted-prefix commit, and argmax correction at the
//! first violation.

use thiserror::Error;

use crate::models::{LanguageModel, ModelError};
use crate::types::{argmax_token, ConditioningFeatures, ProbDist, TokenId, Transcript};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("draft block is empty")]
    EmptyDraft,
    #[error("cannot verify against a terminated prefix")]
    TerminatedPrefix,
    #[error("rank threshold must be >= 1")]
    InvalidRankThreshold,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rank threshold R: a drafted token is accepted iff it falls within the
/// verifier's top-R tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcceptanceConfig {
    rank_threshold: usize,
}

impl AcceptanceConfig {
    pub fn new(rank_threshold: usize) -> Result<Self, VerifyError> {
        if rank_threshold < 1 {
            return Err(VerifyError::InvalidRankThreshold);
        }
        Ok(Self { rank_threshold })
    }

    pub fn rank_threshold(&self) -> usize {
        self.rank_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    FullyAccepted,
    Corrected,
}

/// Verdict on one escalated block: how many leading draft tokens were kept,
/// plus the substitute token when a position was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub accepted_count: usize,
    pub correction: Option<TokenId>,
    pub kind: OutcomeKind,
}

impl VerificationOutcome {
    pub fn fully_accepted(block_len: usize) -> Self {
        Self {
            accepted_count: block_len,
            correction: None,
            kind: OutcomeKind::FullyAccepted,
        }
    }

    pub fn corrected(accepted_count: usize, correction: TokenId) -> Self {
        Self {
            accepted_count,
            correction: Some(correction),
            kind: OutcomeKind::Corrected,
        }
    }

    /// Tokens this outcome appends to a transcript.
    pub fn appended_len(&self) -> usize {
        self.accepted_count + usize::from(self.correction.is_some())
    }
}

/// 1-based rank of `token` under `dist`: one plus the number of strictly
/// greater entries. Ties share the best rank, so the rule is independent of
/// iteration order and favours acceptance on exact ties.
pub fn rank_of(dist: &ProbDist, token: TokenId) -> usize {
    let q = dist.get(token);
    1 + dist.probs().iter().filter(|&&p| p > q).count()
}

/// Scores the whole block in one `score_block` call, then walks left to
/// right accepting while rank <= R. At the first violation the correction is
/// the verifier argmax at that position; teacher forcing makes that
/// distribution exact because every earlier token was accepted as drafted.
/// The rejected suffix is ignored.
pub fn verify_block(
    verifier_lm: &dyn LanguageModel,
    prefix: &Transcript,
    features: &ConditioningFeatures,
    draft: &[TokenId],
    cfg: &AcceptanceConfig,
) -> Result<VerificationOutcome, VerifyError> {
    if draft.is_empty() {
        return Err(VerifyError::EmptyDraft);
    }
    if prefix.is_terminated() {
        return Err(VerifyError::TerminatedPrefix);
    }
    let dists = verifier_lm.score_block(prefix.tokens(), features, draft)?;
    for (i, &tok) in draft.iter().enumerate() {
        if rank_of(&dists[i], tok) > cfg.rank_threshold {
            return Ok(VerificationOutcome::corrected(i, argmax_token(&dists[i])));
        }
    }
    Ok(VerificationOutcome::fully_accepted(draft.len()))
}

/// Reference result computed through L separate `next_dist` calls and a
/// sort-based rank, sharing no scoring path with `verify_block`.
pub fn verify_block_oracle(
    verifier_lm: &dyn LanguageModel,
    prefix: &Transcript,
    features: &ConditioningFeatures,
    draft: &[TokenId],
    cfg: &AcceptanceConfig,
) -> Result<VerificationOutcome, VerifyError> {
    if draft.is_empty() {
        return Err(VerifyError::EmptyDraft);
    }
    if prefix.is_terminated() {
        return Err(VerifyError::TerminatedPrefix);
    }
    let mut ctx: Vec<TokenId> = prefix.tokens().to_vec();
    for (i, &tok) in draft.iter().enumerate() {
        let dist = verifier_lm.next_dist(&ctx, features)?;
        let mut sorted: Vec<f64> = dist.probs().to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("probabilities are not NaN"));
        let q = dist.get(tok);
        let rank = sorted.iter().take_while(|&&p| p > q).count() + 1;
        if rank > cfg.rank_threshold {
            // Highest-probability token, smallest index on ties, found by a
            // reverse scan instead of argmax_token.
            let mut best = dist.len() - 1;
            for j in (0..dist.len()).rev() {
                if dist.probs()[j] >= dist.probs()[best] {
                    best = j;
                }
            }
            return Ok(VerificationOutcome::corrected(i, TokenId(best as u32)));
        }
        ctx.push(tok);
    }
    Ok(VerificationOutcome::fully_accepted(draft.len()))
}
