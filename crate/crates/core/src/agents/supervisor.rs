use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::RecvTimeoutError;
use std::thread;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::aed::{speech_present, AedTags, SpeechCategorySet, DEFAULT_TOP_K};
use super::backend::SegmentRequest;
use super::message::{AgentMessage, FailureReason, Payload};
use super::registry::{AgentId, AgentRegistry};
use crate::classify::{FusionModel, ModalityInput, Prediction};
use crate::domain::{EmbeddingSequence, ModalityId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegradationPolicy {
    /// Substitute a zero vector for the failed modality and mark the
    /// result degraded.
    #[default]
    ZeroFill,
    /// Any failed fusion modality aborts the request.
    FailClosed,
}

impl DegradationPolicy {
    pub fn name(self) -> &'static str {
        match self {
            DegradationPolicy::ZeroFill => "zero_fill",
            DegradationPolicy::FailClosed => "fail_closed",
        }
    }
}

impl fmt::Display for DegradationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero_fill" | "zerofill" => Ok(DegradationPolicy::ZeroFill),
            "fail_closed" | "failclosed" => Ok(DegradationPolicy::FailClosed),
            other => Err(Error::domain(format!("unknown degradation policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorConfig {
    /// How long to wait for each attempt's reply.
    pub timeout: Duration,
    /// Extra attempts after a failed or timed-out one.
    pub retries: u32,
    pub policy: DegradationPolicy,
    pub speech: SpeechCategorySet,
    pub top_k: usize,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(5),
            retries: 1,
            policy: DegradationPolicy::ZeroFill,
            speech: SpeechCategorySet::audioset(),
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl SupervisorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::domain("supervisor timeout must be positive"));
        }
        if self.top_k > super::aed::AUDIO_EVENT_CLASSES {
            return Err(Error::domain(format!("top-k {} exceeds the tag vocabulary", self.top_k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityStatus {
    Ok,
    /// TED disabled by the speech gate.
    Gated,
    Failed(FailureReason),
}

impl fmt::Display for ModalityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModalityStatus::Ok => f.write_str("ok"),
            ModalityStatus::Gated => f.write_str("gated"),
            ModalityStatus::Failed(r) => write!(f, "failed:{r}"),
        }
    }
}

/// One try at one agent. Dead agents show up as `Unavailable` attempts that
/// did not use up the retry budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub modality: ModalityId,
    /// `None` when no healthy instance was left to route to.
    pub agent: Option<AgentId>,
    pub request_id: Option<u64>,
    pub outcome: Result<(), FailureReason>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorOutput {
    pub prediction: Prediction,
    pub degraded: bool,
    pub status: BTreeMap<ModalityId, ModalityStatus>,
    pub speech_present: bool,
    pub attempts: Vec<AttemptRecord>,
    /// SHA-256 over the little-endian payload values of every modality
    /// that answered, hex encoded.
    pub payload_digests: BTreeMap<ModalityId, String>,
}

impl SupervisorOutput {
    pub fn attempts_for(&self, modality: ModalityId) -> impl Iterator<Item = &AttemptRecord> {
        self.attempts.iter().filter(move |a| a.modality == modality)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fetched {
    Sequence(EmbeddingSequence),
    Tags(AedTags),
}

impl Fetched {
    fn digest(&self) -> String {
        let values = match self {
            Fetched::Sequence(s) => s.as_slice(),
            Fetched::Tags(t) => t.scores(),
        };
        let mut h = Sha256::new();
        for v in values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

struct FetchResult {
    outcome: Result<Fetched, (FailureReason, String)>,
    attempts: Vec<AttemptRecord>,
}

/// Requests one modality with retries. Replies that fail or time out use
/// up the budget; an agent found dead is marked unresponsive and skipped
/// in favour of a backup without using it up.
fn fetch(registry: &AgentRegistry, modality: ModalityId, request: &SegmentRequest, config: &SupervisorConfig) -> FetchResult {
    let mut budget = config.retries as usize + 1;
    let mut exclude = Vec::new();
    let mut attempts = Vec::new();
    let mut last = (FailureReason::Unavailable, format!("no {modality} agent registered"));
    while budget > 0 {
        let Some(id) = registry.route(modality, &exclude) else {
            let detail = format!("no healthy {modality} agent left");
            attempts.push(AttemptRecord {
                modality,
                agent: None,
                request_id: None,
                outcome: Err(FailureReason::Unavailable),
                detail: Some(detail.clone()),
            });
            if attempts.len() == 1 {
                last = (FailureReason::Unavailable, detail);
            }
            break;
        };
        let msg = AgentMessage::extract_request(modality, request.clone());
        let rid = msg.request_id;
        let mut record = |outcome: Result<(), FailureReason>, detail: Option<String>| {
            attempts.push(AttemptRecord {
                modality,
                agent: Some(id),
                request_id: Some(rid),
                outcome,
                detail,
            })
        };
        let reply = match registry.send(id, msg) {
            Ok(rx) => rx.recv_timeout(config.timeout),
            Err(_) => Err(RecvTimeoutError::Disconnected),
        };
        match reply {
            Err(RecvTimeoutError::Disconnected) => {
                let detail = format!("agent {id} is not running");
                record(Err(FailureReason::Unavailable), Some(detail.clone()));
                registry.mark_unresponsive(id, FailureReason::Unavailable);
                exclude.push(id);
                last = (FailureReason::Unavailable, detail);
                continue;
            }
            Err(RecvTimeoutError::Timeout) => {
                let detail = format!("agent {id} did not answer within {:?}", config.timeout);
                record(Err(FailureReason::Timeout), Some(detail.clone()));
                last = (FailureReason::Timeout, detail);
            }
            Ok(reply) if reply.request_id != rid || reply.modality != modality => {
                let detail = format!("agent {id} answered request {} instead of {rid}", reply.request_id);
                record(Err(FailureReason::Malformed), Some(detail.clone()));
                last = (FailureReason::Malformed, detail);
            }
            Ok(reply) => match (reply.payload, modality) {
                (Payload::Sequence(s), m) if m != ModalityId::Aed => {
                    record(Ok(()), None);
                    return FetchResult {
                        outcome: Ok(Fetched::Sequence(s)),
                        attempts,
                    };
                }
                (Payload::Tags(t), ModalityId::Aed) => {
                    record(Ok(()), None);
                    return FetchResult {
                        outcome: Ok(Fetched::Tags(t)),
                        attempts,
                    };
                }
                (Payload::Failure { reason, detail }, _) => {
                    record(Err(reason), Some(detail.clone()));
                    last = (reason, detail);
                }
                _ => {
                    let detail = format!("agent {id} replied with the wrong payload type");
                    record(Err(FailureReason::Malformed), Some(detail.clone()));
                    last = (FailureReason::Malformed, detail);
                }
            },
        }
        budget -= 1;
    }
    FetchResult {
        outcome: Err(last),
        attempts,
    }
}

/// Runs one segment through the agents and the fusion model.
///
/// All four modalities are requested concurrently. A missing speech tag
/// in AED's top-k gates TED (zeroed, status "gated"); an AED failure leaves
/// the gate open. Failed fusion modalities are zero-filled or abort the
/// request depending on the policy.
pub fn supervisor_infer(
    request: &SegmentRequest,
    registry: &AgentRegistry,
    model: &FusionModel,
    config: &SupervisorConfig,
) -> Result<SupervisorOutput> {
    config.validate()?;
    let mut results: BTreeMap<ModalityId, FetchResult> = thread::scope(|s| {
        let handles: Vec<_> = ModalityId::ALL
            .iter()
            .map(|&m| (m, s.spawn(move || fetch(registry, m, request, config))))
            .collect();
        handles
            .into_iter()
            .map(|(m, h)| (m, h.join().expect("fetch thread panicked")))
            .collect()
    });

    let mut status = BTreeMap::new();
    let mut attempts = Vec::new();
    let mut payload_digests = BTreeMap::new();
    for m in ModalityId::ALL {
        let r = &results[&m];
        attempts.extend(r.attempts.iter().cloned());
        if let Ok(f) = &r.outcome {
            payload_digests.insert(m, f.digest());
        }
    }

    let aed = results.remove(&ModalityId::Aed).expect("AED fetched");
    let speech = match &aed.outcome {
        Ok(Fetched::Tags(tags)) => {
            status.insert(ModalityId::Aed, ModalityStatus::Ok);
            speech_present(tags, config.top_k, &config.speech)?
        }
        Ok(Fetched::Sequence(_)) => unreachable!("fetch only accepts tags for AED"),
        Err((reason, detail)) => {
            log::warn!("AED failed ({reason}: {detail}); treating speech as present");
            status.insert(ModalityId::Aed, ModalityStatus::Failed(*reason));
            true
        }
    };

    let mut degraded = false;
    let mut sequences: Vec<Option<&EmbeddingSequence>> = Vec::new();
    for m in ModalityId::FUSION {
        let r = &results[&m];
        if m == ModalityId::Ted && !speech {
            status.insert(m, ModalityStatus::Gated);
            degraded = true;
            sequences.push(None);
            continue;
        }
        match &r.outcome {
            Ok(Fetched::Sequence(seq)) => {
                status.insert(m, ModalityStatus::Ok);
                sequences.push(Some(seq));
            }
            Ok(Fetched::Tags(_)) => unreachable!("fetch only accepts sequences for fusion modalities"),
            Err((reason, detail)) => {
                if config.policy == DegradationPolicy::FailClosed {
                    return Err(Error::Orchestration {
                        modality: m,
                        reason: format!("{reason}: {detail}"),
                    });
                }
                log::warn!("{m} failed ({reason}: {detail}); zero-filling");
                status.insert(m, ModalityStatus::Failed(*reason));
                degraded = true;
                sequences.push(None);
            }
        }
    }
    let inputs: Vec<ModalityInput<'_>> =
        sequences.iter().map(|s| s.map_or(ModalityInput::Zeroed, ModalityInput::Sequence)).collect();
    let prediction = model.predict([inputs[0], inputs[1], inputs[2]])?;
    Ok(SupervisorOutput {
        prediction,
        degraded,
        status,
        speech_present: speech,
        attempts,
        payload_digests,
    })
}
