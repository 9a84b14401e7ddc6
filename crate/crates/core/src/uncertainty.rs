//! Token-level entropy and the block escalation gate.

use thiserror::Error;

use crate::types::{kahan_sum, ProbDist};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("cannot gate an empty block")]
    EmptyBlock,
    #[error("gate threshold must not be NaN")]
    NanThreshold,
}

/// Shannon entropy in nats (natural log).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntropyNats(pub f64);

impl EntropyNats {
    pub fn nats(self) -> f64 {
        self.0
    }
}

/// Escalation threshold in nats. `-inf` escalates every block, `+inf` never
/// escalates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    gamma: f64,
}

impl GateConfig {
    pub fn new(gamma: f64) -> Result<Self, GateError> {
        if gamma.is_nan() {
            return Err(GateError::NanThreshold);
        }
        Ok(Self { gamma })
    }

    pub fn always_escalate() -> Self {
        Self {
            gamma: f64::NEG_INFINITY,
        }
    }

    pub fn never_escalate() -> Self {
        Self {
            gamma: f64::INFINITY,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// -sum p ln p with 0 ln 0 = 0, Kahan-accumulated, clamped at 0 so one-hot
/// inputs cannot round to a negative value.
pub fn entropy(dist: &ProbDist) -> EntropyNats {
    let sum = kahan_sum(
        dist.probs()
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }),
    );
    EntropyNats(sum.max(0.0))
}

/// True iff the maximum entropy in the block strictly exceeds gamma.
/// Boundary cases (max == gamma) stay local.
pub fn should_escalate(entropies: &[EntropyNats], gate: &GateConfig) -> Result<bool, GateError> {
    if entropies.is_empty() {
        return Err(GateError::EmptyBlock);
    }
    let max = entropies
        .iter()
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(max > gate.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TokenId;
    use proptest::prelude::*;

    #[test]
    fn entropy_one_hot_is_zero() {
        let d = ProbDist::one_hot(3, TokenId(1));
        assert_eq!(entropy(&d).nats(), 0.0);
    }

    #[test]
    fn entropy_uniform_is_log_size() {
        let d = ProbDist::uniform(4);
        assert!((entropy(&d).nats() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_two_point_symmetric() {
        let d = ProbDist::try_from_probs(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((entropy(&d).nats() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gate_fires_on_max_above_threshold() {
        let gate = GateConfig::new(0.5).unwrap();
        let es = [EntropyNats(0.1), EntropyNats(0.2), EntropyNats(0.9)];
        assert!(should_escalate(&es, &gate).unwrap());
    }

    #[test]
    fn gate_quiet_below_threshold() {
        let gate = GateConfig::new(0.5).unwrap();
        let es = [EntropyNats(0.1), EntropyNats(0.2), EntropyNats(0.3)];
        assert!(!should_escalate(&es, &gate).unwrap());
    }

    #[test]
    fn gate_endpoints() {
        let es = [EntropyNats(0.4)];
        assert!(should_escalate(&es, &GateConfig::always_escalate()).unwrap());
        assert!(!should_escalate(&es, &GateConfig::never_escalate()).unwrap());
    }

    #[test]
    fn gate_boundary_stays_local() {
        let gate = GateConfig::new(0.9).unwrap();
        assert!(!should_escalate(&[EntropyNats(0.9)], &gate).unwrap());
    }

    #[test]
    fn gate_rejects_empty_and_nan() {
        let gate = GateConfig::new(0.5).unwrap();
        assert_eq!(should_escalate(&[], &gate), Err(GateError::EmptyBlock));
        assert_eq!(GateConfig::new(f64::NAN), Err(GateError::NanThreshold));
    }

    #[test]
    fn entropy_matches_oracle_at_ten_thousand_tokens() {
        let weights: Vec<f64> = (0..10_000).map(|i| ((i % 97) + 1) as f64).collect();
        let d = crate::types::normalize(&weights).unwrap();
        let got = entropy(&d).nats();
        let want = entropy_pairwise_oracle(d.probs());
        assert!((got - want).abs() < 1e-12);
    }

    /// Pairwise summation, independent of the Kahan accumulation in the
    /// implementation.
    fn entropy_pairwise_oracle(probs: &[f64]) -> f64 {
        fn pairwise(terms: &[f64]) -> f64 {
            match terms.len() {
                0 => 0.0,
                1 => terms[0],
                n => pairwise(&terms[..n / 2]) + pairwise(&terms[n / 2..]),
            }
        }
        let terms: Vec<f64> = probs
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .collect();
        pairwise(&terms).max(0.0)
    }

    proptest! {
        #[test]
        fn entropy_matches_compensated_oracle(weights in proptest::collection::vec(0.0f64..1.0, 1..256)) {
            prop_assume!(weights.iter().any(|&w| w > 0.0));
            let d = crate::types::normalize(&weights).unwrap();
            let got = entropy(&d).nats();
            let want = entropy_pairwise_oracle(d.probs());
            prop_assert!((got - want).abs() < 1e-12);
        }

        #[test]
        fn entropy_is_permutation_invariant(weights in proptest::collection::vec(0.01f64..1.0, 2..64), seed in any::<u64>()) {
            let d = crate::types::normalize(&weights).unwrap();
            let mut shuffled = d.probs().to_vec();
            // Fisher-Yates with a tiny LCG; proptest supplies the seed.
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let p = ProbDist::try_from_probs(shuffled).unwrap();
            prop_assert!((entropy(&d).nats() - entropy(&p).nats()).abs() < 1e-12);
        }

        #[test]
        fn gate_is_monotone_in_gamma(
            es in proptest::collection::vec(0.0f64..4.0, 1..16),
            g1 in -1.0f64..5.0,
            g2 in -1.0f64..5.0,
        ) {
            let entropies: Vec<EntropyNats> = es.into_iter().map(EntropyNats).collect();
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let at_hi = should_escalate(&entropies, &GateConfig::new(hi).unwrap()).unwrap();
            let at_lo = should_escalate(&entropies, &GateConfig::new(lo).unwrap()).unwrap();
            // Escalating at the higher threshold implies escalating at the lower.
            prop_assert!(!at_hi || at_lo);
        }
    }
}
