use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use super::aed::AedTags;
use super::backend::SegmentRequest;
use crate::domain::{EmbeddingSequence, ModalityId, SegmentKey};

static EPOCH: OnceLock<Instant> = OnceLock::new();
static NEXT_REQUEST_ID: AtomicU64 = AtomicU64::new(1);

/// Time since the first call in this process; never goes backwards.
pub fn monotonic_now() -> Duration {
    EPOCH.get_or_init(Instant::now).elapsed()
}

/// Process-wide unique request identifier.
pub fn next_request_id() -> u64 {
    NEXT_REQUEST_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    ExtractRequest,
    ExtractResponse,
    HealthPing,
    HealthAck,
    Failure,
}

/// Machine-readable failure cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureReason {
    Timeout,
    /// The agent's worker is gone or no instance is registered.
    Unavailable,
    NonZeroExit,
    Malformed,
    DimensionMismatch,
    Io,
    Backend,
}

impl FailureReason {
    pub fn code(self) -> &'static str {
        match self {
            FailureReason::Timeout => "timeout",
            FailureReason::Unavailable => "unavailable",
            FailureReason::NonZeroExit => "nonzero_exit",
            FailureReason::Malformed => "malformed",
            FailureReason::DimensionMismatch => "dimension_mismatch",
            FailureReason::Io => "io",
            FailureReason::Backend => "backend",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Empty,
    Request(SegmentRequest),
    Sequence(EmbeddingSequence),
    Tags(AedTags),
    Failure { reason: FailureReason, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMessage {
    pub request_id: u64,
    pub kind: MessageKind,
    /// Absent for health traffic.
    pub segment: Option<SegmentKey>,
    pub modality: ModalityId,
    pub payload: Payload,
    pub timestamp: Duration,
}

impl AgentMessage {
    pub fn extract_request(modality: ModalityId, request: SegmentRequest) -> Self {
        Self {
            request_id: next_request_id(),
            kind: MessageKind::ExtractRequest,
            segment: Some(request.key.clone()),
            modality,
            payload: Payload::Request(request),
            timestamp: monotonic_now(),
        }
    }

    pub fn ping(modality: ModalityId) -> Self {
        Self {
            request_id: next_request_id(),
            kind: MessageKind::HealthPing,
            segment: None,
            modality,
            payload: Payload::Empty,
            timestamp: monotonic_now(),
        }
    }

    /// A reply echoing this message's id, segment and modality.
    pub fn reply(&self, kind: MessageKind, payload: Payload) -> Self {
        Self {
            request_id: self.request_id,
            kind,
            segment: self.segment.clone(),
            modality: self.modality,
            payload,
            timestamp: monotonic_now(),
        }
    }
}
