//! The cloud verification service: per-session mirror transcripts, checksum
//! handshake, and verify round handling. Transport-agnostic; it consumes and
//! produces encoded frames.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::messages::{
    checksum_hex, decode_message, encode_message, ErrorMsg, VerifyRequestMsg, VerifyResponseMsg,
    WireMessage,
};
use super::ProtocolError;
use crate::models::LanguageModel;
use crate::types::{ConditioningFeatures, TokenId, Transcript};
use crate::verifier::{verify_block, AcceptanceConfig};

/// One line logged per finished session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub session_id: String,
    pub blocks_verified: u64,
    pub corrections: u64,
    pub final_length: u64,
}

struct CloudSession {
    mirror: Transcript,
    features: ConditioningFeatures,
    acceptance: AcceptanceConfig,
    blocks_verified: u64,
    corrections: u64,
}

type SummaryHook = Box<dyn Fn(&SessionSummary) + Send + Sync>;

/// Holds the verifier model and all live session mirrors. Sessions are fully
/// isolated; requests within one session are processed in arrival order.
pub struct CloudService {
    verifier: Arc<dyn LanguageModel>,
    sessions: Mutex<HashMap<String, CloudSession>>,
    summary_hook: Mutex<Option<SummaryHook>>,
}

impl CloudService {
    pub fn new(verifier: Arc<dyn LanguageModel>) -> Self {
        Self {
            verifier,
            sessions: Mutex::new(HashMap::new()),
            summary_hook: Mutex::new(None),
        }
    }

    /// Installs a callback invoked once per session when it ends.
    pub fn set_summary_hook(&self, hook: impl Fn(&SessionSummary) + Send + Sync + 'static) {
        *self.summary_hook.lock().unwrap() = Some(Box::new(hook));
    }

    pub fn verifier(&self) -> &Arc<dyn LanguageModel> {
        &self.verifier
    }

    /// Handles one incoming frame; returns the reply frame if the protocol
    /// calls for one. Hello and bye succeed silently; failures produce an
    /// error record and close the session.
    pub fn handle_frame(&self, frame: &[u8]) -> Option<Vec<u8>> {
        let msg = match decode_message(frame) {
            Ok(m) => m,
            Err(e) => {
                return Some(error_frame("", "malformed", &e.to_string()));
            }
        };
        match msg {
            WireMessage::Hello(hello) => {
                let expected = checksum_hex(self.verifier.vocab().checksum());
                if hello.vocab_checksum != expected {
                    return Some(error_frame(
                        &hello.session_id,
                        "checksum_mismatch",
                        "vocabulary checksum does not match the verifier",
                    ));
                }
                let features = match ConditioningFeatures::new(
                    hello.features.clone(),
                    hello.session_id.clone(),
                ) {
                    Ok(f) => f,
                    Err(e) => {
                        return Some(error_frame(
                            &hello.session_id,
                            "bad_features",
                            &e.to_string(),
                        ))
                    }
                };
                let acceptance = match AcceptanceConfig::new(hello.config.rank_threshold as usize) {
                    Ok(a) => a,
                    Err(e) => {
                        return Some(error_frame(&hello.session_id, "bad_config", &e.to_string()))
                    }
                };
                let mut sessions = self.sessions.lock().unwrap();
                sessions.insert(
                    hello.session_id.clone(),
                    CloudSession {
                        mirror: Transcript::new(),
                        features,
                        acceptance,
                        blocks_verified: 0,
                        corrections: 0,
                    },
                );
                None
            }
            WireMessage::VerifyRequest(req) => Some(self.handle_verify(req)),
            WireMessage::Bye(bye) => {
                let mut sessions = self.sessions.lock().unwrap();
                if let Some(session) = sessions.remove(&bye.session_id) {
                    let summary = SessionSummary {
                        session_id: bye.session_id.clone(),
                        blocks_verified: session.blocks_verified,
                        corrections: session.corrections,
                        final_length: bye.final_length,
                    };
                    drop(sessions);
                    if let Some(hook) = self.summary_hook.lock().unwrap().as_ref() {
                        hook(&summary);
                    }
                }
                None
            }
            WireMessage::VerifyResponse(_) | WireMessage::Error(_) => Some(error_frame(
                msg.session_id(),
                "unexpected_type",
                "edge-to-cloud stream carries hello, verify_request, and bye only",
            )),
        }
    }

    fn handle_verify(&self, req: VerifyRequestMsg) -> Vec<u8> {
        let mut sessions = self.sessions.lock().unwrap();
        let session = match sessions.get_mut(&req.session_id) {
            Some(s) => s,
            None => {
                return error_frame(
                    &req.session_id,
                    "session_unknown",
                    "no hello seen for this session",
                )
            }
        };
        if session.mirror.len() as u64 != req.base_position {
            let e = ProtocolError::PositionMismatch {
                edge_base: req.base_position,
                cloud_len: session.mirror.len() as u64,
            };
            sessions.remove(&req.session_id);
            return error_frame(&req.session_id, "position_mismatch", &e.to_string());
        }
        let mut prefix_tokens: Vec<TokenId> = session.mirror.tokens().to_vec();
        prefix_tokens.extend_from_slice(&req.prefix_delta);
        let prefix = Transcript::from_tokens(prefix_tokens, false);
        let outcome = match verify_block(
            self.verifier.as_ref(),
            &prefix,
            &session.features,
            &req.draft_tokens,
            &session.acceptance,
        ) {
            Ok(o) => o,
            Err(e) => {
                sessions.remove(&req.session_id);
                return error_frame(&req.session_id, "verify_failed", &e.to_string());
            }
        };
        let mut mirror_tokens = prefix.tokens().to_vec();
        mirror_tokens.extend_from_slice(&req.draft_tokens[..outcome.accepted_count]);
        if let Some(c) = outcome.correction {
            mirror_tokens.push(c);
        }
        session.mirror = Transcript::from_tokens(mirror_tokens, false);
        session.blocks_verified += 1;
        if outcome.correction.is_some() {
            session.corrections += 1;
        }
        let response = WireMessage::VerifyResponse(VerifyResponseMsg {
            session_id: req.session_id.clone(),
            accepted_count: outcome.accepted_count as u64,
            correction: outcome.correction,
            verifier_position: session.mirror.len() as u64,
        });
        encode_message(&response).expect("verify_response always encodes")
    }

    /// Cloud-side mirror transcript for a live session. Test hook for the
    /// edge/cloud consistency invariant.
    pub fn mirror_of(&self, session_id: &str) -> Option<Vec<TokenId>> {
        self.sessions
            .lock()
            .unwrap()
            .get(session_id)
            .map(|s| s.mirror.tokens().to_vec())
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

fn error_frame(session_id: &str, code: &str, message: &str) -> Vec<u8> {
    encode_message(&WireMessage::Error(ErrorMsg {
        session_id: session_id.to_string(),
        code: code.to_string(),
        message: message.to_string(),
    }))
    .expect("error record always encodes")
}
