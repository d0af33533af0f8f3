//! Supervisor/worker runtime: encoder agents behind a message protocol,
//! a registry with health checks and failover, and the supervisor that
//! gates, times out, and degrades.

pub mod aed;
pub mod backend;
pub mod external;
pub mod message;
pub mod registry;
pub mod supervisor;

pub use aed::{aed_emotion, speech_filter, speech_present, AedTags, SpeechCategorySet, AUDIO_EVENT_CLASSES, DEFAULT_TOP_K};
pub use backend::{
    derived_rng, synthetic_speech, ArchiveBackend, BackendError, BackendOutput, EncoderBackend, Fault, FaultyBackend,
    SegmentRequest, SyntheticBackend, SyntheticProfile,
};
pub use external::{ExternalProcessBackend, ExternalProcessSpec};
pub use message::{monotonic_now, next_request_id, AgentMessage, FailureReason, MessageKind, Payload};
pub use registry::{AgentHealth, AgentId, AgentRegistry, AgentStatus, EventKind, RegistryEvent};
pub use supervisor::{
    supervisor_infer, AttemptRecord, DegradationPolicy, ModalityStatus, SupervisorConfig, SupervisorOutput,
};
