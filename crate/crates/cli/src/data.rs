//! Loading archives and labels, fusing rows, writing reports.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use emofuse::aggregate::{PoolingModes, FUSED_DIM};
use emofuse::archive::EmbeddingArchive;
use emofuse::classify::{fuse_inputs, ModalityInput};
use emofuse::domain::{ModalityId, SegmentKey};
use emofuse::labels::{read_labels, LabelMap};
use emofuse::metrics::EvalReport;
use emofuse::SentimentClass;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Fails on a missing path before any work starts.
pub fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    fs::metadata(path).map(|_| ()).map_err(|e| CliError::io(format!("{what} {}", path.display()), e))
}

pub fn open_archive(path: &Path) -> CliResult<EmbeddingArchive> {
    require_exists(path, "archive")?;
    EmbeddingArchive::open(path).map_err(|e| CliError::data(format!("archive {}: {e}", path.display())))
}

pub fn load_labels(path: &Path) -> CliResult<LabelMap> {
    require_exists(path, "labels")?;
    read_labels(path).map_err(|e| CliError::data(format!("labels {}: {e}", path.display())))
}

/// Keys with FED, SER and TED records.
pub fn fusion_keys(archive: &EmbeddingArchive) -> BTreeSet<SegmentKey> {
    archive
        .keys()
        .into_iter()
        .filter(|k| ModalityId::FUSION.iter().all(|&m| archive.contains(k, m)))
        .collect()
}

/// Lists at most ten offenders, then a count of the rest.
pub fn list_keys<'a>(keys: impl IntoIterator<Item = &'a SegmentKey>) -> String {
    let keys: Vec<String> = keys.into_iter().map(ToString::to_string).collect();
    let mut s = keys.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > 10 {
        s.push_str(&format!(" and {} more", keys.len() - 10));
    }
    s
}

/// One pooled, padded and concatenated row per key.
pub fn fused_matrix(archive: &EmbeddingArchive, keys: &[SegmentKey], pooling: &PoolingModes) -> CliResult<DMatrix<f64>> {
    let mut rows = Vec::with_capacity(keys.len() * FUSED_DIM);
    for key in keys {
        let seg = archive.segment(key).map_err(|e| CliError::data(format!("{key}: {e}")))?;
        let get = |m: ModalityId| {
            seg.get(&m)
                .map(ModalityInput::Sequence)
                .ok_or_else(|| CliError::data(format!("{key} has no {m} record")))
        };
        let fused = fuse_inputs([get(ModalityId::Fed)?, get(ModalityId::Ser)?, get(ModalityId::Ted)?], pooling)?;
        rows.extend_from_slice(fused.values());
    }
    Ok(DMatrix::from_row_slice(keys.len(), FUSED_DIM, &rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Provenance block shared by every report.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: &'static str,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct EvalJson {
    pub n: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub mae: f64,
    pub classes: Vec<&'static str>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub f1_per_class: Vec<f64>,
}

impl From<&EvalReport> for EvalJson {
    fn from(r: &EvalReport) -> Self {
        Self {
            n: r.n,
            accuracy: r.accuracy,
            weighted_f1: r.weighted_f1,
            mae: r.mae,
            classes: SentimentClass::ALL.iter().map(|c| c.name()).collect(),
            confusion: r.confusion.iter().map(|row| row.to_vec()).collect(),
            confusion_normalized: r.confusion_normalized.iter().map(|row| row.to_vec()).collect(),
            f1_per_class: r.f1_per_class().to_vec(),
        }
    }
}
