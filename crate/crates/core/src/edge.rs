//! Edge-side draft engine: block drafting with entropy tracking, local
//! commit of confident blocks, and resynchronization after cloud
//! verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::adaptive::{record_outcome, AdaptiveState, BlockOutcome};
use crate::models::{LanguageModel, ModelError};
use crate::protocol::PrivacyCounters;
use crate::types::{argmax_token, ConditioningFeatures, ProbDist, TokenId, Transcript};
use crate::uncertainty::{entropy, EntropyNats};
use crate::verifier::{OutcomeKind, VerificationOutcome};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("session transcript is already terminated")]
    Terminated,
    #[error("block length must be >= 1")]
    EmptyBlock,
    #[error("cannot locally commit an escalated block")]
    EscalatedBlock,
    #[error("resync requires an escalated block")]
    NotEscalated,
    #[error("outcome inconsistent with block: {0}")]
    InconsistentOutcome(String),
    #[error("block start {start} does not match transcript length {len}")]
    StaleBlock { start: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the draft engine selects tokens. Greedy is the default; temperature
/// sampling draws from the session's seeded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DraftSampling {
    Greedy,
    Temperature(f64),
}

/// A contiguous run of drafted tokens with the entropy of each predictive
/// distribution, recorded before selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftBlock {
    pub start_index: usize,
    pub tokens: Vec<TokenId>,
    pub entropies: Vec<EntropyNats>,
    pub escalated: bool,
}

impl DraftBlock {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-utterance decoding state. The transcript holds only locally committed
/// or cloud-verified tokens, never unverified escalated drafts.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub transcript: Transcript,
    pub features: ConditioningFeatures,
    pub controller: AdaptiveState,
    pub counters: PrivacyCounters,
    pub max_tokens: usize,
    eos: TokenId,
    sampling: DraftSampling,
    rng: ChaCha12Rng,
}

impl SessionState {
    pub fn new(
        features: ConditioningFeatures,
        eos: TokenId,
        max_tokens: usize,
        sampling: DraftSampling,
        sampling_seed: u64,
    ) -> Self {
        Self {
            transcript: Transcript::new(),
            features,
            controller: AdaptiveState::new(),
            counters: PrivacyCounters::default(),
            max_tokens,
            eos,
            sampling,
            rng: ChaCha12Rng::seed_from_u64(sampling_seed),
        }
    }

    pub fn greedy(features: ConditioningFeatures, eos: TokenId, max_tokens: usize) -> Self {
        Self::new(features, eos, max_tokens, DraftSampling::Greedy, 0)
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    fn select(&mut self, dist: &ProbDist) -> TokenId {
        match self.sampling {
            DraftSampling::Greedy => argmax_token(dist),
            DraftSampling::Temperature(t) => {
                let weights: Vec<f64> = dist.probs().iter().map(|&p| p.powf(1.0 / t)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = self.rng.gen::<f64>() * total;
                for (i, &w) in weights.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        return TokenId(i as u32);
                    }
                }
                TokenId((dist.len() - 1) as u32)
            }
        }
    }

    fn finish_if_needed(&mut self) {
        let last_is_eos = self.transcript.tokens.last() == Some(&self.eos);
        if last_is_eos || self.transcript.len() >= self.max_tokens {
            self.transcript.terminated = true;
        }
    }
}

/// Drafts up to `block_len` tokens conditioned on the committed prefix,
/// recording the entropy of each predictive distribution. Stops early at eos
/// or the session token cap. The escalation flag starts unset; the gate
/// decides later.
pub fn draft_block(
    state: &mut SessionState,
    draft_lm: &dyn LanguageModel,
    block_len: usize,
) -> Result<DraftBlock, EdgeError> {
    if state.transcript.is_terminated() {
        return Err(EdgeError::Terminated);
    }
    if block_len == 0 {
        return Err(EdgeError::EmptyBlock);
    }
    let start_index = state.transcript.len();
    let budget = block_len.min(state.max_tokens - start_index);
    let mut working: Vec<TokenId> = state.transcript.tokens().to_vec();
    let mut tokens = Vec::with_capacity(budget);
    let mut entropies = Vec::with_capacity(budget);
    for _ in 0..budget {
        let dist = draft_lm.next_dist(&working, &state.features)?;
        entropies.push(entropy(&dist));
        let tok = state.select(&dist);
        tokens.push(tok);
        working.push(tok);
        if tok == state.eos {
            break;
        }
    }
    Ok(DraftBlock {
        start_index,
        tokens,
        entropies,
        escalated: false,
    })
}

/// Appends a non-escalated block to the transcript and notifies the
/// controller. Only valid when the gate declined to escalate.
pub fn commit_local(state: &mut SessionState, block: &DraftBlock) -> Result<(), EdgeError> {
    if block.escalated {
        return Err(EdgeError::EscalatedBlock);
    }
    if block.start_index != state.transcript.len() {
        return Err(EdgeError::StaleBlock {
            start: block.start_index,
            len: state.transcript.len(),
        });
    }
    state.transcript.tokens.extend_from_slice(&block.tokens);
    state.counters.total_drafted += block.len() as u64;
    record_outcome(&mut state.controller, BlockOutcome::LocalCommit);
    state.finish_if_needed();
    Ok(())
}

/// Applies a verification outcome for an escalated block: keeps the accepted
/// draft prefix, appends the correction when present, and discards the
/// remaining draft suffix. Counts the whole block as transmitted.
pub fn resync(
    state: &mut SessionState,
    block: &DraftBlock,
    outcome: &VerificationOutcome,
) -> Result<(), EdgeError> {
    if !block.escalated {
        return Err(EdgeError::NotEscalated);
    }
    if block.start_index != state.transcript.len() {
        return Err(EdgeError::StaleBlock {
            start: block.start_index,
            len: state.transcript.len(),
        });
    }
    if outcome.accepted_count > block.len() {
        return Err(EdgeError::InconsistentOutcome(format!(
            "accepted {} of a {}-token block",
            outcome.accepted_count,
            block.len()
        )));
    }
    match outcome.kind {
        OutcomeKind::FullyAccepted => {
            if outcome.correction.is_some() || outcome.accepted_count != block.len() {
                return Err(EdgeError::InconsistentOutcome(
                    "full acceptance must cover the block and carry no correction".into(),
                ));
            }
        }
        OutcomeKind::Corrected => {
            if outcome.correction.is_none() || outcome.accepted_count >= block.len() {
                return Err(EdgeError::InconsistentOutcome(
                    "correction requires a substitute token and a rejected position".into(),
                ));
            }
        }
    }
    state
        .transcript
        .tokens
        .extend_from_slice(&block.tokens[..outcome.accepted_count]);
    if let Some(correction) = outcome.correction {
        state.transcript.tokens.push(correction);
    }
    state.counters.total_drafted += block.len() as u64;
    state.counters.transmitted += block.len() as u64;
    let block_outcome = match outcome.kind {
        OutcomeKind::FullyAccepted => BlockOutcome::FullyAccepted,
        OutcomeKind::Corrected => BlockOutcome::Corrected,
    };
    record_outcome(&mut state.controller, block_outcome);
    state.finish_if_needed();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ngram_fit, TableModel};
    use crate::types::Vocabulary;

    fn vocab(n: u32) -> Vocabulary {
        Vocabulary::new(n, TokenId(n - 1), None).unwrap()
    }

    fn feats() -> ConditioningFeatures {
        ConditioningFeatures::new(vec![], "utt-0").unwrap()
    }

    fn state(eos: u32, max_tokens: usize) -> SessionState {
        SessionState::greedy(feats(), TokenId(eos), max_tokens)
    }

    fn block(start: usize, ids: &[u32], escalated: bool) -> DraftBlock {
        DraftBlock {
            start_index: start,
            tokens: ids.iter().map(|&t| TokenId(t)).collect(),
            entropies: vec![EntropyNats(0.0); ids.len()],
            escalated,
        }
    }

    #[test]
    fn one_hot_table_drafts_deterministically_with_zero_entropy() {
        let v = vocab(4);
        let mut t = TableModel::new(v);
        t.insert(vec![], "utt-0", ProbDist::one_hot(4, TokenId(1)));
        t.insert(vec![TokenId(1)], "utt-0", ProbDist::one_hot(4, TokenId(2)));
        let mut s = state(3, 64);
        let b = draft_block(&mut s, &t, 2).unwrap();
        assert_eq!(b.tokens, vec![TokenId(1), TokenId(2)]);
        assert!(b.entropies.iter().all(|e| e.nats() == 0.0));
        assert!(!b.escalated);
    }

    #[test]
    fn draft_stops_early_at_eos() {
        let v = vocab(4);
        let mut t = TableModel::new(v);
        t.insert(vec![], "utt-0", ProbDist::one_hot(4, TokenId(0)));
        t.insert(vec![TokenId(0)], "utt-0", ProbDist::one_hot(4, TokenId(1)));
        t.insert(
            vec![TokenId(0), TokenId(1)],
            "utt-0",
            ProbDist::one_hot(4, TokenId(3)),
        );
        let mut s = state(3, 64);
        let b = draft_block(&mut s, &t, 5).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(*b.tokens.last().unwrap(), TokenId(3));
    }

    #[test]
    fn draft_respects_max_tokens_budget() {
        let v = vocab(3);
        let mut t = TableModel::new(v);
        t.insert(vec![], "utt-0", ProbDist::one_hot(3, TokenId(0)));
        t.insert(vec![TokenId(0)], "utt-0", ProbDist::one_hot(3, TokenId(0)));
        let mut s = state(2, 2);
        let b = draft_block(&mut s, &t, 5).unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn greedy_bigram_draft_matches_hand_counts() {
        let v = vocab(3);
        let corpus = Transcript::from_tokens(
            [0u32, 1, 0, 1, 0].iter().map(|&t| TokenId(t)).collect(),
            false,
        );
        let m = ngram_fit(&[corpus], 2, 1.0, &v).unwrap();
        let mut s = state(2, 64);
        s.transcript = Transcript::from_tokens(vec![TokenId(0)], false);
        let b = draft_block(&mut s, &m, 1).unwrap();
        assert_eq!(b.tokens, vec![TokenId(1)]);
    }

    #[test]
    fn draft_on_terminated_session_fails() {
        let v = vocab(2);
        let t = TableModel::new(v);
        let mut s = state(1, 4);
        s.transcript = Transcript::from_tokens(vec![TokenId(1)], true);
        assert!(matches!(
            draft_block(&mut s, &t, 3),
            Err(EdgeError::Terminated)
        ));
    }

    #[test]
    fn commit_local_appends_and_counts() {
        let mut s = state(9, 64);
        commit_local(&mut s, &block(0, &[5, 7], false)).unwrap();
        assert_eq!(s.transcript.tokens(), &[TokenId(5), TokenId(7)]);
        assert_eq!(s.counters.total_drafted, 2);
        assert_eq!(s.counters.transmitted, 0);
    }

    #[test]
    fn commit_local_block_ending_in_eos_terminates() {
        let mut s = state(3, 64);
        commit_local(&mut s, &block(0, &[1, 3], false)).unwrap();
        assert!(s.transcript.is_terminated());
    }

    #[test]
    fn two_local_commits_accumulate_counters() {
        let mut s = state(9, 64);
        commit_local(&mut s, &block(0, &[1, 2, 3, 4, 5], false)).unwrap();
        commit_local(&mut s, &block(5, &[6, 7, 8], false)).unwrap();
        assert_eq!(s.transcript.len(), 8);
        assert_eq!(s.counters.total_drafted, 8);
    }

    #[test]
    fn commit_local_rejects_escalated_block() {
        let mut s = state(9, 64);
        assert!(matches!(
            commit_local(&mut s, &block(0, &[1], true)),
            Err(EdgeError::EscalatedBlock)
        ));
    }

    #[test]
    fn resync_full_acceptance() {
        let mut s = state(9, 64);
        let b = block(0, &[1, 2, 3], true);
        resync(&mut s, &b, &VerificationOutcome::fully_accepted(3)).unwrap();
        assert_eq!(s.transcript.tokens(), &[TokenId(1), TokenId(2), TokenId(3)]);
        assert_eq!(s.counters.transmitted, 3);
        assert_eq!(s.counters.total_drafted, 3);
    }

    #[test]
    fn resync_correction_discards_suffix() {
        let mut s = state(9, 64);
        let b = block(0, &[1, 2, 3], true);
        resync(&mut s, &b, &VerificationOutcome::corrected(1, TokenId(7))).unwrap();
        // Keeps [1], appends correction 7, discards [2, 3].
        assert_eq!(s.transcript.tokens(), &[TokenId(1), TokenId(7)]);
        assert_eq!(s.counters.transmitted, 3);
    }

    #[test]
    fn resync_immediate_rejection() {
        let mut s = state(9, 64);
        let b = block(0, &[4], true);
        resync(&mut s, &b, &VerificationOutcome::corrected(0, TokenId(2))).unwrap();
        assert_eq!(s.transcript.tokens(), &[TokenId(2)]);
    }

    #[test]
    fn resync_eos_correction_terminates() {
        let mut s = state(3, 64);
        let b = block(0, &[1, 2], true);
        resync(&mut s, &b, &VerificationOutcome::corrected(1, TokenId(3))).unwrap();
        assert!(s.transcript.is_terminated());
    }

    #[test]
    fn resync_length_accounting() {
        for (accepted, correction) in [(0usize, Some(5u32)), (2, Some(5)), (3, None)] {
            let mut s = state(9, 64);
            let b = block(0, &[1, 2, 3], true);
            let outcome = match correction {
                Some(c) => VerificationOutcome::corrected(accepted, TokenId(c)),
                None => VerificationOutcome::fully_accepted(3),
            };
            resync(&mut s, &b, &outcome).unwrap();
            assert_eq!(s.transcript.len(), outcome.appended_len());
        }
    }

    #[test]
    fn resync_rejects_inconsistent_outcomes() {
        let mut s = state(9, 64);
        let b = block(0, &[1, 2], true);
        // accepted_count beyond block length
        assert!(matches!(
            resync(&mut s, &b, &VerificationOutcome::corrected(5, TokenId(0))),
            Err(EdgeError::InconsistentOutcome(_))
        ));
        // full acceptance together with a correction
        let bogus = VerificationOutcome {
            accepted_count: 2,
            correction: Some(TokenId(0)),
            kind: OutcomeKind::FullyAccepted,
        };
        assert!(matches!(
            resync(&mut s, &b, &bogus),
            Err(EdgeError::InconsistentOutcome(_))
        ));
        // non-escalated block
        assert!(matches!(
            resync(
                &mut s,
                &block(0, &[1], false),
                &VerificationOutcome::fully_accepted(1)
            ),
            Err(EdgeError::NotEscalated)
        ));
    }

    #[test]
    fn temperature_sampling_is_seeded_and_reproducible() {
        let v = vocab(4);
        let corpus = Transcript::from_tokens(
            [0u32, 1, 2, 0, 1, 2].iter().map(|&t| TokenId(t)).collect(),
            false,
        );
        let m = ngram_fit(&[corpus], 2, 1.0, &v).unwrap();
        let mut a = SessionState::new(feats(), TokenId(3), 16, DraftSampling::Temperature(1.0), 7);
        let mut b = SessionState::new(feats(), TokenId(3), 16, DraftSampling::Temperature(1.0), 7);
        let ba = draft_block(&mut a, &m, 8).unwrap();
        let bb = draft_block(&mut b, &m, 8).unwrap();
        assert_eq!(ba, bb);
    }
}
