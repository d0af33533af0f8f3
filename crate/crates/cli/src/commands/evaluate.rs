use emofuse::domain::{SegmentKey, SentimentClass};
use emofuse::{compute_metrics, discretize_sentiment};
use serde::Serialize;

use super::infer::PredictionRecord;
use super::Context;
use crate::data::{list_keys, load_labels, require_exists, write_file, write_json, EvalJson, Provenance};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct EvalFile {
    #[serde(flatten)]
    provenance: Provenance,
    /// Records without a class (inline inference errors).
    skipped: usize,
    #[serde(flatten)]
    metrics: EvalJson,
}

pub fn parse_predictions(text: &str) -> CliResult<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("predictions line {}: {e}", i + 1))))
        .collect()
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir();
    let pred_path = cfg.path("predictions").unwrap_or_else(|| out.join("predictions.jsonl"));
    require_exists(&pred_path, "predictions")?;
    let text = std::fs::read_to_string(&pred_path).map_err(|e| CliError::io(format!("{}", pred_path.display()), e))?;
    let records = parse_predictions(&text)?;
    let labels = load_labels(&cfg.require_path("labels")?)?;

    let mut unknown = Vec::new();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut skipped = 0;
    for r in &records {
        let key: SegmentKey = r.key.parse().map_err(|e| CliError::data(format!("prediction key {:?}: {e}", r.key)))?;
        let Some(&score) = labels.get(&key) else {
            unknown.push(key);
            continue;
        };
        let Some(class) = &r.class else {
            skipped += 1;
            continue;
        };
        let class: SentimentClass = class.parse().map_err(|e| CliError::data(format!("{key}: {e}")))?;
        pred.push(class);
        truth.push(discretize_sentiment(score)?);
    }
    if !unknown.is_empty() {
        return Err(CliError::data(format!(
            "{} prediction keys are not in the labels file: {}",
            unknown.len(),
            list_keys(&unknown)
        )));
    }
    if pred.is_empty() {
        return Err(CliError::data("no classified predictions to evaluate"));
    }
    let report = compute_metrics(&pred, &truth)?;
    let confusion = report.normalized_confusion_text();
    write_file(&out.join("confusion.txt"), confusion.as_bytes())?;
    write_json(
        &out.join("eval_report.json"),
        &EvalFile {
            provenance: ctx.provenance("evaluate")?,
            skipped,
            metrics: EvalJson::from(&report),
        },
    )?;
    println!(
        "n {}  accuracy {:.4}  weighted F1 {:.4}  MAE {:.4}",
        report.n, report.accuracy, report.weighted_f1, report.mae
    );
    print!("{confusion}");
    Ok(())
}
