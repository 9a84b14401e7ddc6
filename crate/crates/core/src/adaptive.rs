//! Adaptive block-length controller. The first block uses the base length;
//! a correction drops the next block to the minimum; two or more consecutive
//! fully-accepted (or confidently local) blocks raise it to the maximum.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LengthConfigError {
    #[error("lengths must satisfy 1 <= l_min <= l_base <= l_max")]
    BadOrdering,
    #[error("fixed length must be >= 1")]
    BadFixed,
}

/// Block length bounds, plus an optional fixed override that disables
/// adaptivity entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthConfig {
    l_min: usize,
    l_base: usize,
    l_max: usize,
    fixed_l: Option<usize>,
}

impl LengthConfig {
    pub fn adaptive(l_min: usize, l_base: usize, l_max: usize) -> Result<Self, LengthConfigError> {
        if l_min < 1 || l_min > l_base || l_base > l_max {
            return Err(LengthConfigError::BadOrdering);
        }
        Ok(Self {
            l_min,
            l_base,
            l_max,
            fixed_l: None,
        })
    }

    pub fn fixed(l: usize) -> Result<Self, LengthConfigError> {
        if l < 1 {
            return Err(LengthConfigError::BadFixed);
        }
        Ok(Self {
            l_min: l,
            l_base: l,
            l_max: l,
            fixed_l: Some(l),
        })
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_base(&self) -> usize {
        self.l_base
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn fixed_l(&self) -> Option<usize> {
        self.fixed_l
    }
}

/// How the previous block ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOutcome {
    /// Cloud rejected a position and substituted a correction.
    Corrected,
    /// Cloud accepted every drafted token.
    FullyAccepted,
    /// Block stayed local; the gate never fired.
    LocalCommit,
}

/// Controller state: the previous outcome and the running streak of blocks
/// without a correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdaptiveState {
    last_outcome: Option<BlockOutcome>,
    consecutive_accepts: u32,
}

impl AdaptiveState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_outcome(&self) -> Option<BlockOutcome> {
        self.last_outcome
    }

    pub fn consecutive_accepts(&self) -> u32 {
        self.consecutive_accepts
    }
}

/// Length of the next block under the current state. Priority order: fixed
/// override, first block, post-correction minimum, streak maximum, base.
pub fn next_block_length(state: &AdaptiveState, cfg: &LengthConfig) -> usize {
    if let Some(l) = cfg.fixed_l {
        return l;
    }
    match state.last_outcome {
        None => cfg.l_base,
        Some(BlockOutcome::Corrected) => cfg.l_min,
        Some(_) if state.consecutive_accepts >= 2 => cfg.l_max,
        Some(_) => cfg.l_base,
    }
}

/// Folds one block outcome into the state. A correction resets the streak;
/// anything else extends it (saturating).
pub fn record_outcome(state: &mut AdaptiveState, outcome: BlockOutcome) {
    state.consecutive_accepts = match outcome {
        BlockOutcome::Corrected => 0,
        BlockOutcome::FullyAccepted | BlockOutcome::LocalCommit => {
            state.consecutive_accepts.saturating_add(1)
        }
    };
    state.last_outcome = Some(outcome);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg357() -> LengthConfig {
        LengthConfig::adaptive(3, 5, 7).unwrap()
    }

    #[test]
    fn first_block_uses_base() {
        assert_eq!(next_block_length(&AdaptiveState::new(), &cfg357()), 5);
    }

    #[test]
    fn correction_drops_to_min() {
        let mut s = AdaptiveState::new();
        record_outcome(&mut s, BlockOutcome::Corrected);
        assert_eq!(next_block_length(&s, &cfg357()), 3);
    }

    #[test]
    fn streak_of_two_raises_to_max() {
        let mut s = AdaptiveState::new();
        record_outcome(&mut s, BlockOutcome::FullyAccepted);
        assert_eq!(next_block_length(&s, &cfg357()), 5);
        record_outcome(&mut s, BlockOutcome::FullyAccepted);
        assert_eq!(s.consecutive_accepts(), 2);
        assert_eq!(next_block_length(&s, &cfg357()), 7);
    }

    #[test]
    fn correction_resets_streak() {
        let mut s = AdaptiveState::new();
        for _ in 0..5 {
            record_outcome(&mut s, BlockOutcome::FullyAccepted);
        }
        assert_eq!(s.consecutive_accepts(), 5);
        record_outcome(&mut s, BlockOutcome::Corrected);
        assert_eq!(s.consecutive_accepts(), 0);
    }

    #[test]
    fn hand_traced_sequence() {
        // Accept, Accept, Correct, Accept -> lengths 5, 7, 3, 5.
        let cfg = cfg357();
        let mut s = AdaptiveState::new();
        let outcomes = [
            BlockOutcome::FullyAccepted,
            BlockOutcome::FullyAccepted,
            BlockOutcome::Corrected,
            BlockOutcome::FullyAccepted,
        ];
        let mut lengths = Vec::new();
        for o in outcomes {
            record_outcome(&mut s, o);
            lengths.push(next_block_length(&s, &cfg));
        }
        assert_eq!(lengths, vec![5, 7, 3, 5]);
    }

    #[test]
    fn local_commits_count_toward_streak() {
        let mut s = AdaptiveState::new();
        record_outcome(&mut s, BlockOutcome::LocalCommit);
        record_outcome(&mut s, BlockOutcome::LocalCommit);
        assert_eq!(next_block_length(&s, &cfg357()), 7);
    }

    #[test]
    fn fixed_override_is_constant() {
        let cfg = LengthConfig::fixed(9).unwrap();
        let mut s = AdaptiveState::new();
        assert_eq!(next_block_length(&s, &cfg), 9);
        record_outcome(&mut s, BlockOutcome::Corrected);
        assert_eq!(next_block_length(&s, &cfg), 9);
        for _ in 0..4 {
            record_outcome(&mut s, BlockOutcome::FullyAccepted);
        }
        assert_eq!(next_block_length(&s, &cfg), 9);
    }

    #[test]
    fn config_validation() {
        assert!(LengthConfig::adaptive(5, 3, 7).is_err());
        assert!(LengthConfig::adaptive(0, 1, 2).is_err());
        assert!(LengthConfig::fixed(0).is_err());
        assert!(LengthConfig::adaptive(3, 3, 3).is_ok());
    }

    /// Straight-line restatement of the rules, independent of the state
    /// struct: track only (last was correction, streak).
    fn reference_lengths(outcomes: &[u8], l_min: usize, l_base: usize, l_max: usize) -> Vec<usize> {
        let mut lengths = vec![l_base];
        let mut streak = 0u32;
        for &o in outcomes {
            let last_corrected = o == 0;
            if last_corrected {
                streak = 0;
            } else {
                streak += 1;
            }
            let l = if last_corrected {
                l_min
            } else if streak >= 2 {
                l_max
            } else {
                l_base
            };
            lengths.push(l);
        }
        lengths
    }

    #[test]
    fn exhaustive_sequences_match_reference() {
        // All outcome sequences up to length 10 over the 3 outcome symbols.
        let cfg = cfg357();
        for len in 0..=10usize {
            let mut seq = vec![0u8; len];
            loop {
                let mut s = AdaptiveState::new();
                let mut got = vec![next_block_length(&s, &cfg)];
                for &o in &seq {
                    let outcome = match o {
                        0 => BlockOutcome::Corrected,
                        1 => BlockOutcome::FullyAccepted,
                        _ => BlockOutcome::LocalCommit,
                    };
                    record_outcome(&mut s, outcome);
                    got.push(next_block_length(&s, &cfg));
                }
                assert_eq!(got, reference_lengths(&seq, 3, 5, 7), "sequence {seq:?}");
                let mut i = 0;
                loop {
                    if i == len {
                        break;
                    }
                    if seq[i] < 2 {
                        seq[i] += 1;
                        break;
                    }
                    seq[i] = 0;
                    i += 1;
                }
                if i == len {
                    break;
                }
            }
            if len == 0 {
                continue;
            }
        }
    }

    #[test]
    fn output_is_always_a_configured_length() {
        let cfg = cfg357();
        let mut s = AdaptiveState::new();
        let all = [
            BlockOutcome::Corrected,
            BlockOutcome::FullyAccepted,
            BlockOutcome::LocalCommit,
        ];
        for i in 0..200 {
            record_outcome(&mut s, all[i % 3]);
            let l = next_block_length(&s, &cfg);
            assert!([3, 5, 7].contains(&l));
        }
    }
}
