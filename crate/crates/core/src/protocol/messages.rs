//! Message schemas and the newline-delimited text codec.
//!
//! One UTF-8 JSON object per line, discriminated by a `type` field in
//! {hello, verify_request, verify_response, bye, error}. Unknown fields are
//! rejected, which makes the privacy closure enforceable at the schema
//! level.

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::types::TokenId;

/// Session configuration carried once in the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionWireConfig {
    pub rank_threshold: u32,
    /// Gate threshold in nats. Serialized as a number when finite and as
    /// "inf" / "-inf" otherwise, since JSON has no infinity literal.
    #[serde(with = "maybe_infinite")]
    pub gamma: f64,
    pub l_min: u32,
    pub l_base: u32,
    pub l_max: u32,
}

/// Opens a session: id, vocabulary checksum, conditioning features, config.
/// By construction there is no field capable of carrying the raw payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloMsg {
    pub session_id: String,
    pub vocab_checksum: String,
    pub features: Vec<f64>,
    pub config: SessionWireConfig,
}

/// One escalated block. `base_position` is the cloud's last known verified
/// transcript length; `prefix_delta` carries tokens committed locally since
/// the previous message, so the cloud can reconstruct the full prefix from
/// its mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequestMsg {
    pub session_id: String,
    pub base_position: u64,
    pub prefix_delta: Vec<TokenId>,
    pub draft_tokens: Vec<TokenId>,
}

/// Verification verdict. `verifier_position` is the cloud transcript length
/// after applying this response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyResponseMsg {
    pub session_id: String,
    pub accepted_count: u64,
    pub correction: Option<TokenId>,
    pub verifier_position: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoReport {
    pub transmitted: u64,
    pub total_drafted: u64,
}

/// Closes a session and reports the transmission-rate counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByeMsg {
    pub session_id: String,
    pub final_length: u64,
    pub rho_report: RhoReport,
}

/// Server-side failure record; the session is closed after sending one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMsg {
    pub session_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello(HelloMsg),
    VerifyRequest(VerifyRequestMsg),
    VerifyResponse(VerifyResponseMsg),
    Bye(ByeMsg),
    Error(ErrorMsg),
}

impl WireMessage {
    pub fn session_id(&self) -> &str {
        match self {
            WireMessage::Hello(m) => &m.session_id,
            WireMessage::VerifyRequest(m) => &m.session_id,
            WireMessage::VerifyResponse(m) => &m.session_id,
            WireMessage::Bye(m) => &m.session_id,
            WireMessage::Error(m) => &m.session_id,
        }
    }

    fn check_invariants(&self) -> Result<(), ProtocolError> {
        match self {
            WireMessage::Hello(m) => {
                if m.config.gamma.is_nan() {
                    return Err(ProtocolError::InvariantViolation("gamma is NaN".into()));
                }
                if m.config.rank_threshold < 1 {
                    return Err(ProtocolError::InvariantViolation(
                        "rank_threshold must be >= 1".into(),
                    ));
                }
                if !(1 <= m.config.l_min
                    && m.config.l_min <= m.config.l_base
                    && m.config.l_base <= m.config.l_max)
                {
                    return Err(ProtocolError::InvariantViolation(
                        "lengths must satisfy 1 <= l_min <= l_base <= l_max".into(),
                    ));
                }
                if m.features.iter().any(|v| !v.is_finite()) {
                    return Err(ProtocolError::InvariantViolation(
                        "features must be finite".into(),
                    ));
                }
            }
            WireMessage::VerifyRequest(m) => {
                if m.draft_tokens.is_empty() {
                    return Err(ProtocolError::InvariantViolation(
                        "draft_tokens must be non-empty".into(),
                    ));
                }
            }
            WireMessage::VerifyResponse(_) => {}
            WireMessage::Bye(m) => {
                if m.rho_report.transmitted > m.rho_report.total_drafted {
                    return Err(ProtocolError::InvariantViolation(
                        "transmitted exceeds total_drafted".into(),
                    ));
                }
            }
            WireMessage::Error(_) => {}
        }
        Ok(())
    }
}

/// Encodes one message as a newline-terminated JSON line.
pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, ProtocolError> {
    msg.check_invariants()?;
    let mut line = serde_json::to_vec(msg)
        .map_err(|e| ProtocolError::Malformed(format!("encode failed: {e}")))?;
    line.push(b'\n');
    Ok(line)
}

/// Decodes one line. Distinguishes bad structure, unknown discriminators,
/// and invariant violations.
pub fn decode_message(line: &[u8]) -> Result<WireMessage, ProtocolError> {
    let text = std::str::from_utf8(line)
        .map_err(|_| ProtocolError::Malformed("frame is not UTF-8".into()))?;
    let mut value: serde_json::Value = serde_json::from_str(text.trim_end_matches(['\r', '\n']))
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ProtocolError::Malformed("frame is not an object".into()))?;
    let ty = match obj.remove("type") {
        Some(serde_json::Value::String(s)) => s,
        Some(_) => return Err(ProtocolError::Malformed("type must be a string".into())),
        None => return Err(ProtocolError::Malformed("missing type field".into())),
    };
    let malformed = |e: serde_json::Error| ProtocolError::Malformed(e.to_string());
    let msg = match ty.as_str() {
        "hello" => WireMessage::Hello(serde_json::from_value(value).map_err(malformed)?),
        "verify_request" => {
            WireMessage::VerifyRequest(serde_json::from_value(value).map_err(malformed)?)
        }
        "verify_response" => {
            WireMessage::VerifyResponse(serde_json::from_value(value).map_err(malformed)?)
        }
        "bye" => WireMessage::Bye(serde_json::from_value(value).map_err(malformed)?),
        "error" => WireMessage::Error(serde_json::from_value(value).map_err(malformed)?),
        other => return Err(ProtocolError::UnknownType(other.to_string())),
    };
    msg.check_invariants()?;
    Ok(msg)
}

pub(crate) fn checksum_hex(checksum: u64) -> String {
    format!("{checksum:016x}")
}

mod maybe_infinite {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct MaybeInfiniteVisitor;

    impl Visitor<'_> for MaybeInfiniteVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number, \"inf\", or \"-inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("bad threshold string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(MaybeInfiniteVisitor)
    }
}
