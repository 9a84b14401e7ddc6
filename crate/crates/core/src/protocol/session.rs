//! The edge session loop: draft, gate, commit-or-escalate, resync, repeat.
//!
//! The loop is synchronous per session and blocks on each verify round-trip.
//! A session that never escalates sends nothing at all; the handshake is
//! deferred to the first escalation.

use super::cloud::CloudService;
use super::messages::{
    checksum_hex, decode_message, encode_message, ByeMsg, HelloMsg, RhoReport, SessionWireConfig,
    VerifyRequestMsg, WireMessage,
};
use super::transport::CloudTransport;
use super::{PrivacyCounters, ProtocolError};
use crate::adaptive::{next_block_length, LengthConfig};
use crate::edge::{commit_local, draft_block, resync, DraftSampling, SessionState};
use crate::models::LanguageModel;
use crate::simtime::{DecodeTrace, TraceEvent};
use crate::types::{TokenId, Transcript, UtteranceInput};
use crate::uncertainty::{should_escalate, GateConfig};
use crate::verifier::VerificationOutcome;

/// Everything one edge session needs beyond the models and the transport.
#[derive(Debug, Clone)]
pub struct EdgeSessionConfig {
    pub session_id: String,
    pub gate: GateConfig,
    pub rank_threshold: u32,
    pub lengths: LengthConfig,
    pub max_tokens: usize,
    pub sampling: DraftSampling,
    pub sampling_seed: u64,
}

impl EdgeSessionConfig {
    pub fn greedy(
        session_id: impl Into<String>,
        gate: GateConfig,
        rank_threshold: u32,
        lengths: LengthConfig,
        max_tokens: usize,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            gate,
            rank_threshold,
            lengths,
            max_tokens,
            sampling: DraftSampling::Greedy,
            sampling_seed: 0,
        }
    }

    fn wire_config(&self) -> SessionWireConfig {
        SessionWireConfig {
            rank_threshold: self.rank_threshold,
            gamma: self.gate.gamma(),
            l_min: self.lengths.l_min() as u32,
            l_base: self.lengths.l_base() as u32,
            l_max: self.lengths.l_max() as u32,
        }
    }
}

/// Result of one session: the committed transcript, the full event trace,
/// the privacy counters, and an abort reason if the transport or protocol
/// failed mid-run (the transcript is then partial).
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub transcript: Transcript,
    pub trace: DecodeTrace,
    pub counters: PrivacyCounters,
    pub aborted: Option<String>,
}

struct WireState<'a> {
    transport: &'a mut dyn CloudTransport,
    hello_sent: bool,
    synced_len: usize,
}

impl WireState<'_> {
    fn send(&mut self, msg: &WireMessage, trace: &mut DecodeTrace) -> Result<(), ProtocolError> {
        let frame = encode_message(msg)?;
        trace.push(TraceEvent::Send { bytes: frame.len() });
        self.transport.send_frame(&frame)
    }

    fn recv(&mut self, trace: &mut DecodeTrace) -> Result<WireMessage, ProtocolError> {
        let frame = self.transport.recv_frame()?;
        trace.push(TraceEvent::Receive { bytes: frame.len() });
        let msg = decode_message(&frame)?;
        if let WireMessage::Error(e) = msg {
            return Err(ProtocolError::Remote {
                code: e.code,
                message: e.message,
            });
        }
        Ok(msg)
    }
}

/// Runs one utterance end to end against a cloud handle. Only the features
/// ever reach the wire; the raw payload stays inside `utterance`.
pub fn edge_run_session(
    utterance: &UtteranceInput,
    draft_lm: &dyn LanguageModel,
    transport: &mut dyn CloudTransport,
    cfg: &EdgeSessionConfig,
) -> SessionRun {
    let features = utterance.features().clone();
    let mut trace = DecodeTrace::new(features.dim());
    let mut state = SessionState::new(
        features,
        draft_lm.vocab().eos(),
        cfg.max_tokens,
        cfg.sampling,
        cfg.sampling_seed,
    );
    let mut wire = WireState {
        transport,
        hello_sent: false,
        synced_len: 0,
    };
    let abort = run_loop(&mut state, draft_lm, &mut wire, cfg, &mut trace).err();
    if wire.hello_sent && abort.is_none() {
        let bye = WireMessage::Bye(ByeMsg {
            session_id: cfg.session_id.clone(),
            final_length: state.transcript.len() as u64,
            rho_report: RhoReport {
                transmitted: state.counters.transmitted,
                total_drafted: state.counters.total_drafted,
            },
        });
        let _ = wire.send(&bye, &mut trace);
    }
    trace.push(TraceEvent::Terminate);
    SessionRun {
        transcript: state.transcript,
        trace,
        counters: state.counters,
        aborted: abort.map(|e| e.to_string()),
    }
}

fn run_loop(
    state: &mut SessionState,
    draft_lm: &dyn LanguageModel,
    wire: &mut WireState<'_>,
    cfg: &EdgeSessionConfig,
    trace: &mut DecodeTrace,
) -> Result<(), ProtocolError> {
    while !state.transcript.is_terminated() {
        let block_len = next_block_length(&state.controller, &cfg.lengths);
        let mut block = draft_block(state, draft_lm, block_len)
            .map_err(|e| ProtocolError::Transport(format!("draft failed: {e}")))?;
        for k in 0..block.len() {
            trace.push(TraceEvent::DraftToken {
                index: block.start_index + k,
            });
        }
        let escalate = should_escalate(&block.entropies, &cfg.gate)
            .map_err(|e| ProtocolError::Transport(format!("gate failed: {e}")))?;
        trace.push(TraceEvent::GateDecision {
            escalated: escalate,
        });
        if !escalate {
            commit_local(state, &block)
                .map_err(|e| ProtocolError::Transport(format!("commit failed: {e}")))?;
            trace.push(TraceEvent::Commit { count: block.len() });
            continue;
        }
        block.escalated = true;
        if !wire.hello_sent {
            let hello = WireMessage::Hello(HelloMsg {
                session_id: cfg.session_id.clone(),
                vocab_checksum: checksum_hex(draft_lm.vocab().checksum()),
                features: state.features.values().to_vec(),
                config: cfg.wire_config(),
            });
            wire.send(&hello, trace)?;
            wire.hello_sent = true;
        }
        let prefix_delta: Vec<TokenId> = state.transcript.tokens()[wire.synced_len..].to_vec();
        let request = WireMessage::VerifyRequest(VerifyRequestMsg {
            session_id: cfg.session_id.clone(),
            base_position: wire.synced_len as u64,
            prefix_delta,
            draft_tokens: block.tokens.clone(),
        });
        wire.send(&request, trace)?;
        trace.push(TraceEvent::Verify {
            block_len: block.len(),
        });
        let response = match wire.recv(trace)? {
            WireMessage::VerifyResponse(r) => r,
            other => {
                return Err(ProtocolError::Malformed(format!(
                    "expected verify_response, got {:?} frame",
                    other.session_id()
                )))
            }
        };
        if response.session_id != cfg.session_id {
            return Err(ProtocolError::SessionUnknown(response.session_id));
        }
        let outcome = outcome_from_response(&response, block.len())?;
        resync(state, &block, &outcome)
            .map_err(|e| ProtocolError::InvariantViolation(format!("resync failed: {e}")))?;
        if response.verifier_position != state.transcript.len() as u64 {
            return Err(ProtocolError::PositionMismatch {
                edge_base: state.transcript.len() as u64,
                cloud_len: response.verifier_position,
            });
        }
        wire.synced_len = state.transcript.len();
        trace.push(TraceEvent::Commit {
            count: outcome.appended_len(),
        });
    }
    Ok(())
}

fn outcome_from_response(
    response: &super::messages::VerifyResponseMsg,
    block_len: usize,
) -> Result<VerificationOutcome, ProtocolError> {
    let accepted = response.accepted_count as usize;
    match response.correction {
        None if accepted == block_len => Ok(VerificationOutcome::fully_accepted(block_len)),
        Some(correction) if accepted < block_len => {
            Ok(VerificationOutcome::corrected(accepted, correction))
        }
        _ => Err(ProtocolError::InvariantViolation(format!(
            "response accepted {accepted} of {block_len} with correction {:?}",
            response.correction
        ))),
    }
}

/// Convenience wrapper for the common in-process case.
pub fn run_in_process(
    utterance: &UtteranceInput,
    draft_lm: &dyn LanguageModel,
    service: std::sync::Arc<CloudService>,
    cfg: &EdgeSessionConfig,
) -> SessionRun {
    let mut transport = super::transport::InProcessTransport::new(service);
    edge_run_session(utterance, draft_lm, &mut transport, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ngram_fit, NGramModel};
    use crate::protocol::transmission_rate;
    use crate::protocol::transport::{InProcessTransport, RecordingTransport};
    use crate::types::{ConditioningFeatures, Vocabulary};
    use std::sync::Arc;

    fn toy_setup() -> (Vocabulary, NGramModel) {
        let vocab = Vocabulary::new(5, TokenId(4), None).unwrap();
        let mk =
            |ids: &[u32]| Transcript::from_tokens(ids.iter().map(|&t| TokenId(t)).collect(), true);
        let corpus = vec![
            mk(&[0, 1, 2, 3, 4]),
            mk(&[0, 1, 2, 3, 4]),
            mk(&[0, 2, 1, 3, 4]),
        ];
        let model = ngram_fit(&corpus, 2, 0.2, &vocab).unwrap();
        (vocab, model)
    }

    fn utterance() -> UtteranceInput {
        UtteranceInput::new(
            b"raw-waveform-bytes".to_vec(),
            ConditioningFeatures::new(vec![0.1, 0.2], "utt-0").unwrap(),
        )
    }

    fn cfg(session_id: &str, gate: GateConfig, r: u32) -> EdgeSessionConfig {
        EdgeSessionConfig::greedy(
            session_id,
            gate,
            r,
            LengthConfig::adaptive(3, 5, 7).unwrap(),
            32,
        )
    }

    #[test]
    fn never_escalate_sends_nothing() {
        let (_, model) = toy_setup();
        let service = Arc::new(CloudService::new(Arc::new(model.clone())));
        let mut transport = RecordingTransport::new(InProcessTransport::new(service));
        let run = edge_run_session(
            &utterance(),
            &model,
            &mut transport,
            &cfg("s-edge", GateConfig::never_escalate(), 1),
        );
        assert!(run.aborted.is_none());
        assert!(transport.sent.is_empty());
        assert_eq!(run.counters.transmitted, 0);
        assert_eq!(transmission_rate(&run.counters).unwrap(), 0.0);
        assert!(run.transcript.is_terminated());
    }

    #[test]
    fn always_escalate_transmits_every_draft() {
        let (_, model) = toy_setup();
        let service = Arc::new(CloudService::new(Arc::new(model.clone())));
        let mut transport = InProcessTransport::new(service);
        let run = edge_run_session(
            &utterance(),
            &model,
            &mut transport,
            &cfg("s-cloud", GateConfig::always_escalate(), 3),
        );
        assert!(run.aborted.is_none(), "{:?}", run.aborted);
        assert_eq!(run.counters.transmitted, run.counters.total_drafted);
        assert_eq!(transmission_rate(&run.counters).unwrap(), 1.0);
    }

    #[test]
    fn cloud_mirror_matches_edge_after_each_round_trip() {
        let (_, model) = toy_setup();
        let service = Arc::new(CloudService::new(Arc::new(model.clone())));
        // Keep the session open by skipping bye: check the mirror just
        // before the session would close, via a transport that snoops the
        // final transcript length instead. Simpler: run fully and assert
        // the bye carried matching counters by replaying the trace.
        let mut transport = RecordingTransport::new(InProcessTransport::new(service.clone()));
        let run = edge_run_session(
            &utterance(),
            &model,
            &mut transport,
            &cfg("s-mirror", GateConfig::always_escalate(), 2),
        );
        assert!(run.aborted.is_none());
        // Every frame the edge sent must decode under the closed schema.
        for frame in &transport.sent {
            decode_message(frame).unwrap();
        }
        // Final verify_response position must equal the final transcript
        // length: the edge checked this inline, so reaching here with no
        // abort already proves mirror consistency at every round trip.
        assert!(run.transcript.is_terminated());
    }

    #[test]
    fn trace_commit_counts_sum_to_transcript_length() {
        let (_, model) = toy_setup();
        let service = Arc::new(CloudService::new(Arc::new(model.clone())));
        let mut transport = InProcessTransport::new(service);
        let run = edge_run_session(
            &utterance(),
            &model,
            &mut transport,
            &cfg("s-count", GateConfig::new(0.5).unwrap(), 2),
        );
        assert!(run.aborted.is_none());
        assert_eq!(run.trace.output_tokens(), run.transcript.len());
        assert_eq!(
            run.trace.drafted_tokens() as u64,
            run.counters.total_drafted
        );
        assert_eq!(
            run.trace.transmitted_tokens() as u64,
            run.counters.transmitted
        );
    }

    #[test]
    fn checksum_mismatch_aborts_with_partial_transcript() {
        let (_, model) = toy_setup();
        // Cloud speaks a different vocabulary.
        let other_vocab = Vocabulary::new(9, TokenId(8), None).unwrap();
        let other = ngram_fit(
            &[Transcript::from_tokens(vec![TokenId(0)], true)],
            2,
            1.0,
            &other_vocab,
        )
        .unwrap();
        let service = Arc::new(CloudService::new(Arc::new(other)));
        let mut transport = InProcessTransport::new(service);
        let run = edge_run_session(
            &utterance(),
            &model,
            &mut transport,
            &cfg("s-bad", GateConfig::always_escalate(), 1),
        );
        let reason = run.aborted.expect("session must abort");
        assert!(reason.contains("checksum_mismatch"), "{reason}");
    }
}
