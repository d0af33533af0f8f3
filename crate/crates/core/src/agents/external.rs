use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::aed::{AedTags, DEFAULT_TOP_K};
use super::backend::{BackendError, BackendOutput, EncoderBackend, SegmentRequest};
use super::message::FailureReason;
use crate::archive::decode_record;
use crate::domain::ModalityId;

/// How to run an out-of-process encoder.
///
/// For each request the backend writes `<request_id>.req` into
/// `exchange_dir` (lines `key=`, `modality=`, `input=`), runs
/// `program args... <path to .req>` in `working_dir`, and expects exit code 0
/// with a single EMB1 record left at `<request_id>.emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalProcessSpec {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    pub exchange_dir: PathBuf,
    pub modality: ModalityId,
    pub output_dim: usize,
    /// Kills a runaway child after this long so it does not outlive the
    /// request. The supervisor's own timeout is what callers observe.
    pub kill_after: Option<Duration>,
}

impl ExternalProcessSpec {
    pub fn new(program: impl Into<PathBuf>, modality: ModalityId, exchange_dir: impl Into<PathBuf>) -> Self {
        let exchange_dir = exchange_dir.into();
        Self {
            program: program.into(),
            args: Vec::new(),
            working_dir: exchange_dir.clone(),
            exchange_dir,
            modality,
            output_dim: modality.native_dim(),
            kill_after: None,
        }
    }
}

pub struct ExternalProcessBackend {
    spec: ExternalProcessSpec,
}

impl ExternalProcessBackend {
    pub fn new(spec: ExternalProcessSpec) -> Self {
        Self { spec }
    }

    pub fn request_text(&self, request: &SegmentRequest) -> String {
        let input = request.input.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_default();
        format!("key={}\nmodality={}\ninput={}\n", request.key, self.spec.modality, input)
    }

    fn run(&self, req_path: &Path, emb_path: &Path) -> Result<BackendOutput, BackendError> {
        let io = |e: std::io::Error| BackendError::new(FailureReason::Io, e.to_string());
        let mut child = Command::new(&self.spec.program)
            .args(&self.spec.args)
            .arg(req_path)
            .current_dir(&self.spec.working_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(io)?;
        let start = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait().map_err(io)? {
                break status;
            }
            if self.spec.kill_after.is_some_and(|d| start.elapsed() >= d) {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BackendError::new(FailureReason::Timeout, "encoder process killed"));
            }
            thread::sleep(Duration::from_millis(5));
        };
        if !status.success() {
            return Err(BackendError::new(FailureReason::NonZeroExit, format!("encoder process exited with {status}")));
        }
        let bytes = fs::read(emb_path)
            .map_err(|e| BackendError::new(FailureReason::Malformed, format!("no response record: {e}")))?;
        let seq = decode_record(&bytes).map_err(|e| BackendError::new(FailureReason::Malformed, e.to_string()))?;
        let m = self.spec.modality;
        if seq.modality() != m {
            return Err(BackendError::new(
                FailureReason::Malformed,
                format!("expected a {m} record, got {}", seq.modality()),
            ));
        }
        if !self.accepts_dim(seq.dim()) {
            return Err(BackendError::new(
                FailureReason::DimensionMismatch,
                format!("declared width {}, record has {}", self.spec.output_dim, seq.dim()),
            ));
        }
        if m == ModalityId::Aed {
            return AedTags::from_sequence(&seq, DEFAULT_TOP_K)
                .map(BackendOutput::Tags)
                .map_err(|e| BackendError::new(FailureReason::Malformed, e.to_string()));
        }
        Ok(BackendOutput::Sequence(seq))
    }
}

impl EncoderBackend for ExternalProcessBackend {
    fn modality(&self) -> ModalityId {
        self.spec.modality
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn extract(&mut self, request_id: u64, request: &SegmentRequest) -> Result<BackendOutput, BackendError> {
        let req_path = self.spec.exchange_dir.join(format!("{request_id}.req"));
        let emb_path = self.spec.exchange_dir.join(format!("{request_id}.emb"));
        fs::write(&req_path, self.request_text(request))
            .map_err(|e| BackendError::new(FailureReason::Io, format!("{}: {e}", req_path.display())))?;
        let out = self.run(&req_path, &emb_path);
        let _ = fs::remove_file(&req_path);
        let _ = fs::remove_file(&emb_path);
        out
    }
}
