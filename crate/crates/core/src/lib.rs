//! Edge-cloud collaborative decoding with entropy-gated speculation.
//!
//! A lightweight draft model generates token blocks on the edge. Blocks whose
//! maximum token entropy exceeds a gate threshold are escalated to a cloud
//! verifier, which accepts a longest prefix under a rank rule and substitutes
//! a single correction at the first violation. Block length adapts to recent
//! verification outcomes. Everything is deterministic given seeds, so the
//! whole protocol is testable at desk scale: toy n-gram models stand in for
//! the real backbones, a virtual-clock replay stands in for real hardware,
//! and privacy is enforced at the wire-schema level (raw utterance bytes
//! never leave the edge).

pub mod adaptive;
pub mod bench;
pub mod edge;
pub mod evalmetrics;
pub mod models;
pub mod protocol;
pub mod seed;
pub mod simtime;
pub mod types;
pub mod uncertainty;
pub mod verifier;

pub use types::{
    argmax_token, normalize, ConditioningFeatures, CoreError, ProbDist, TokenId, Transcript,
    UtteranceInput, Vocabulary,
};

pub use models::{LanguageModel, ModelError, NGramModel, PerturbedModel, TableModel};
pub use uncertainty::{entropy, should_escalate, EntropyNats, GateConfig};
pub use verifier::{rank_of, verify_block, AcceptanceConfig, OutcomeKind, VerificationOutcome};
