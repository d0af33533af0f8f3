use std::collections::BTreeMap;
use std::sync::Arc;

use emofuse::agents::{supervisor_infer, AgentRegistry, ArchiveBackend, SegmentRequest};
use emofuse::classify::FusionModel;
use emofuse::domain::{ModalityId, SegmentKey};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::data::{open_archive, require_exists, write_file, write_json, Provenance};
use crate::error::{CliError, CliResult};

/// One line of the predictions file. Segments that could not be classified
/// carry `error` instead of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(default)]
    pub degraded: bool,
    #[serde(default)]
    pub status: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct InferReport {
    #[serde(flatten)]
    provenance: Provenance,
    segments: usize,
    classified: usize,
    degraded: usize,
    errors: usize,
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir();
    let model_path = cfg.path("model").unwrap_or_else(|| out.join("model.fus"));
    require_exists(&model_path, "model")?;
    let model = FusionModel::read(&model_path).map_err(|e| match e {
        emofuse::Error::Io(source) => CliError::io(format!("model {}", model_path.display()), source),
        other => CliError::data(format!("model {}: {other}", model_path.display())),
    })?;
    let supervisor = cfg.supervisor()?;
    let archive = Arc::new(open_archive(&cfg.require_path("archive")?)?);

    let keys: Vec<SegmentKey> = if ctx.segments.is_empty() {
        archive.keys().into_iter().collect()
    } else {
        ctx.segments
            .iter()
            .map(|s| s.parse().map_err(|e: emofuse::Error| CliError::config(format!("--segment {s:?}: {e}"))))
            .collect::<CliResult<_>>()?
    };

    let registry = AgentRegistry::default();
    for m in ModalityId::ALL {
        registry.register(Box::new(ArchiveBackend::new(archive.clone(), m)));
    }
    let mut lines = String::new();
    let (mut classified, mut degraded, mut errors) = (0, 0, 0);
    for key in &keys {
        let record = match supervisor_infer(&SegmentRequest::new(key.clone()), &registry, &model, &supervisor) {
            Ok(o) => {
                classified += 1;
                degraded += usize::from(o.degraded);
                PredictionRecord {
                    key: key.to_string(),
                    class: Some(o.prediction.class.name().to_string()),
                    probabilities: Some(o.prediction.probabilities.to_vec()),
                    degraded: o.degraded,
                    status: o.status.iter().map(|(m, s)| (m.to_string(), s.to_string())).collect(),
                    error: None,
                }
            }
            Err(e) => {
                errors += 1;
                log::warn!("{key}: {e}");
                PredictionRecord {
                    key: key.to_string(),
                    class: None,
                    probabilities: None,
                    degraded: true,
                    status: BTreeMap::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        lines.push_str(&serde_json::to_string(&record).map_err(|e| CliError::data(e.to_string()))?);
        lines.push('\n');
    }
    let pred_path = cfg.path("predictions").unwrap_or_else(|| out.join("predictions.jsonl"));
    write_file(&pred_path, lines.as_bytes())?;
    write_json(
        &out.join("infer_report.json"),
        &InferReport {
            provenance: ctx.provenance("infer")?,
            segments: keys.len(),
            classified,
            degraded,
            errors,
        },
    )?;
    println!("{classified}/{} segments classified ({degraded} degraded, {errors} errors)", keys.len());
    Ok(())
}
