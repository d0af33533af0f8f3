use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::aed::{AedTags, SpeechCategorySet, AUDIO_EVENT_CLASSES, DEFAULT_TOP_K};
use super::message::FailureReason;
use crate::archive::EmbeddingArchive;
use crate::domain::{EmbeddingSequence, ModalityId, SegmentKey, SentimentClass};
use crate::error::{Error, Result};

/// What an agent is asked to encode.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub key: SegmentKey,
    /// Source media or pre-extracted input for backends that read files.
    pub input: Option<PathBuf>,
    /// Class the synthetic backend should plant; ignored by real encoders.
    pub class_hint: Option<SentimentClass>,
    /// Forces the synthetic AED backend's speech decision.
    pub speech_hint: Option<bool>,
}

impl SegmentRequest {
    pub fn new(key: SegmentKey) -> Self {
        Self {
            key,
            input: None,
            class_hint: None,
            speech_hint: None,
        }
    }

    pub fn with_input(mut self, path: PathBuf) -> Self {
        self.input = Some(path);
        self
    }

    pub fn with_class(mut self, class: SentimentClass) -> Self {
        self.class_hint = Some(class);
        self
    }

    pub fn with_speech(mut self, speech: bool) -> Self {
        self.speech_hint = Some(speech);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutput {
    Sequence(EmbeddingSequence),
    Tags(AedTags),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{reason}: {detail}")]
pub struct BackendError {
    pub reason: FailureReason,
    pub detail: String,
}

impl BackendError {
    pub fn new(reason: FailureReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

/// An encoder for one modality. Implementations run on the agent's own
/// worker thread and may block.
pub trait EncoderBackend: Send {
    fn modality(&self) -> ModalityId;

    /// Declared frame width.
    fn output_dim(&self) -> usize;

    fn accepts_dim(&self, dim: usize) -> bool {
        dim == self.output_dim()
    }

    fn extract(&mut self, request_id: u64, request: &SegmentRequest) -> Result<BackendOutput, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProfile {
    pub frames_min: usize,
    pub frames_max: usize,
    /// Offset added along the class's latent axis.
    pub class_shift: f64,
    /// Standard deviation of the latent factors.
    pub noise: f64,
    pub latent_rank: usize,
    pub ser_dim: usize,
    /// Chance that an unhinted segment has no speech.
    pub speech_absent_fraction: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            frames_min: 4,
            frames_max: 12,
            class_shift: 3.0,
            noise: 1.0,
            latent_rank: 8,
            ser_dim: 256,
            speech_absent_fraction: 0.0,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::domain(format!(
                "frame range [{}, {}] must be non-empty and start at >= 1",
                self.frames_min, self.frames_max
            )));
        }
        if self.latent_rank < SentimentClass::COUNT {
            return Err(Error::domain(format!(
                "latent rank {} cannot hold {} class axes",
                self.latent_rank,
                SentimentClass::COUNT
            )));
        }
        if !ModalityId::Ser.accepts_dim(self.ser_dim) {
            return Err(Error::domain(format!("SER width must be 256 or 1024, got {}", self.ser_dim)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0 && self.class_shift.is_finite()) {
            return Err(Error::domain("synthetic noise and shift must be finite, noise >= 0"));
        }
        if !(0.0..=1.0).contains(&self.speech_absent_fraction) {
            return Err(Error::domain("speech-absent fraction outside [0, 1]"));
        }
        Ok(())
    }

    pub fn dim(&self, modality: ModalityId) -> usize {
        match modality {
            ModalityId::Ser => self.ser_dim,
            m => m.native_dim(),
        }
    }
}

/// Deterministic RNG for a labelled purpose; independent streams for
/// distinct `(seed, parts)` tuples.
pub fn derived_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Whether an unhinted synthetic segment carries speech.
pub fn synthetic_speech(seed: u64, key: &SegmentKey, absent_fraction: f64) -> bool {
    derived_rng(seed, &["speech", &key.to_string()]).random::<f64>() >= absent_fraction
}

const MUSIC_TAG: usize = 137;

/// Seeded stand-in encoder. Frames are `z_t^T L` for a fixed per-modality
/// loading matrix `L` (`rank x dim`) and latent factors `z_t` that carry a
/// class shift on axis `class` plus Gaussian noise, so every segment lives in
/// a low-rank subspace with class-dependent means.
pub struct SyntheticBackend {
    seed: u64,
    modality: ModalityId,
    profile: SyntheticProfile,
    loadings: DMatrix<f64>,
}

impl SyntheticBackend {
    pub fn new(seed: u64, modality: ModalityId, profile: SyntheticProfile) -> Result<Self> {
        profile.validate()?;
        let dim = profile.dim(modality);
        let r = profile.latent_rank;
        let mut rng = derived_rng(seed, &["loadings", modality.name()]);
        let scale = 1.0 / (r as f64).sqrt();
        let loadings = DMatrix::from_fn(r, dim, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            scale * v
        });
        Ok(Self {
            seed,
            modality,
            profile,
            loadings,
        })
    }

    pub fn generate(&self, request: &SegmentRequest) -> BackendOutput {
        let key = request.key.to_string();
        let mut rng = derived_rng(self.seed, &["frames", self.modality.name(), &key]);
        if self.modality == ModalityId::Aed {
            let speech = request
                .speech_hint
                .unwrap_or_else(|| synthetic_speech(self.seed, &request.key, self.profile.speech_absent_fraction));
            let mut scores: Vec<f64> = (0..AUDIO_EVENT_CLASSES).map(|_| rng.random_range(0.0..0.1)).collect();
            if speech {
                scores[0] = 0.9;
                scores[4] = 0.6;
            } else {
                // Background noise must not leak a speech tag into the top-k.
                for i in SpeechCategorySet::audioset().indices() {
                    scores[i] = 0.0;
                }
                scores[MUSIC_TAG] = 0.9;
                scores[MUSIC_TAG + 1] = 0.5;
            }
            return BackendOutput::Tags(AedTags::new(scores, DEFAULT_TOP_K).expect("scores in range"));
        }
        let t = rng.random_range(self.profile.frames_min..=self.profile.frames_max);
        let r = self.profile.latent_rank;
        let z = DMatrix::from_fn(t, r, |_, j| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let shift = match request.class_hint {
                Some(c) if c.ordinal() == j => self.profile.class_shift,
                _ => 0.0,
            };
            shift + self.profile.noise * noise
        });
        let frames = z * &self.loadings;
        let data: Vec<f64> = frames.transpose().as_slice().to_vec();
        BackendOutput::Sequence(EmbeddingSequence::new(self.modality, self.loadings.ncols(), data).expect("finite frames"))
    }
}

impl EncoderBackend for SyntheticBackend {
    fn modality(&self) -> ModalityId {
        self.modality
    }

    fn output_dim(&self) -> usize {
        self.loadings.ncols()
    }

    fn extract(&mut self, _request_id: u64, request: &SegmentRequest) -> Result<BackendOutput, BackendError> {
        Ok(self.generate(request))
    }
}

/// Serves pre-extracted records from an embedding archive.
pub struct ArchiveBackend {
    archive: Arc<EmbeddingArchive>,
    modality: ModalityId,
}

impl ArchiveBackend {
    pub fn new(archive: Arc<EmbeddingArchive>, modality: ModalityId) -> Self {
        Self { archive, modality }
    }
}

impl EncoderBackend for ArchiveBackend {
    fn modality(&self) -> ModalityId {
        self.modality
    }

    fn output_dim(&self) -> usize {
        self.modality.native_dim()
    }

    fn accepts_dim(&self, dim: usize) -> bool {
        self.modality.accepts_dim(dim)
    }

    fn extract(&mut self, _request_id: u64, request: &SegmentRequest) -> Result<BackendOutput, BackendError> {
        if !self.archive.contains(&request.key, self.modality) {
            return Err(BackendError::new(
                FailureReason::Unavailable,
                format!("no {} record for {}", self.modality, request.key),
            ));
        }
        let seq = self
            .archive
            .get(&request.key, self.modality)
            .map_err(|e| BackendError::new(FailureReason::Malformed, e.to_string()))?;
        if self.modality == ModalityId::Aed {
            return AedTags::from_sequence(&seq, DEFAULT_TOP_K)
                .map(BackendOutput::Tags)
                .map_err(|e| BackendError::new(FailureReason::Malformed, e.to_string()));
        }
        Ok(BackendOutput::Sequence(seq))
    }
}

/// Fault-injection wrapper for exercising the supervisor.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    None,
    Fail(FailureReason),
    /// Sleeps before answering normally.
    Hang(Duration),
    /// Answers with frames one column too wide.
    WrongDim,
}

pub struct FaultyBackend {
    inner: Box<dyn EncoderBackend>,
    fault: Fault,
}

impl FaultyBackend {
    pub fn new(inner: Box<dyn EncoderBackend>, fault: Fault) -> Self {
        Self { inner, fault }
    }
}

impl EncoderBackend for FaultyBackend {
    fn modality(&self) -> ModalityId {
        self.inner.modality()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn extract(&mut self, request_id: u64, request: &SegmentRequest) -> Result<BackendOutput, BackendError> {
        match &self.fault {
            Fault::None => self.inner.extract(request_id, request),
            Fault::Fail(reason) => Err(BackendError::new(*reason, "injected failure")),
            Fault::Hang(d) => {
                std::thread::sleep(*d);
                self.inner.extract(request_id, request)
            }
            Fault::WrongDim => {
                let d = self.inner.output_dim() + 1;
                Ok(BackendOutput::Sequence(
                    EmbeddingSequence::new(self.inner.modality(), d, vec![0.0; d]).expect("zeros"),
                ))
            }
        }
    }
}
