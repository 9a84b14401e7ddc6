//! Edge-cloud wire protocol: newline-delimited message schemas, the cloud
//! verification service, in-process and TCP transports, the edge session
//! loop, and privacy accounting.
//!
//! Schema closure is part of the privacy contract: every message type is a
//! closed set of fields (unknown fields are rejected on decode), none of
//! which can carry the raw utterance payload. Token ids, features, config,
//! and positions are the only things that cross the boundary.

mod cloud;
mod messages;
mod session;
mod transport;

pub use cloud::{CloudService, SessionSummary};
pub use messages::{
    decode_message, encode_message, ByeMsg, ErrorMsg, HelloMsg, RhoReport, SessionWireConfig,
    VerifyRequestMsg, VerifyResponseMsg, WireMessage,
};
pub use session::{edge_run_session, run_in_process, EdgeSessionConfig, SessionRun};
pub use transport::{
    CloudServer, CloudTransport, InProcessTransport, RecordingTransport, TcpTransport,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("message violates an invariant: {0}")]
    InvariantViolation(String),
    #[error("unknown session {0}")]
    SessionUnknown(String),
    #[error("position mismatch: edge base {edge_base}, cloud mirror {cloud_len}")]
    PositionMismatch { edge_base: u64, cloud_len: u64 },
    #[error("vocabulary checksum mismatch")]
    ChecksumMismatch,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
}

/// Token counts that define the transmission rate rho. `total_drafted`
/// counts every token the draft engine ever produced, including suffixes
/// later discarded by a correction; `transmitted` counts tokens sent in
/// `draft_tokens` fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrivacyCounters {
    pub total_drafted: u64,
    pub transmitted: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhoError {
    #[error("no tokens drafted")]
    NoTokens,
}

/// rho = transmitted / total_drafted, in [0, 1].
pub fn transmission_rate(counters: &PrivacyCounters) -> Result<f64, RhoError> {
    if counters.total_drafted == 0 {
        return Err(RhoError::NoTokens);
    }
    Ok(counters.transmitted as f64 / counters.total_drafted as f64)
}

#[cfg(test)]
mod rho_tests {
    use super::*;

    #[test]
    fn rho_definition() {
        let c = PrivacyCounters {
            total_drafted: 100,
            transmitted: 18,
        };
        assert_eq!(transmission_rate(&c), Ok(0.18));
    }

    #[test]
    fn rho_zero_when_never_escalated() {
        let c = PrivacyCounters {
            total_drafted: 50,
            transmitted: 0,
        };
        assert_eq!(transmission_rate(&c), Ok(0.0));
    }

    #[test]
    fn rho_undefined_without_tokens() {
        assert_eq!(
            transmission_rate(&PrivacyCounters::default()),
            Err(RhoError::NoTokens)
        );
    }
}
