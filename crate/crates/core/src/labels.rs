//! Label files: one `<video_id>_<segment_index>\t<score>` record per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::domain::{discretize_sentiment, SegmentKey};
use crate::error::{Error, Result};

pub type LabelMap = BTreeMap<SegmentKey, f64>;

/// Blank lines are skipped; anything else must be a well-formed record.
pub fn parse_labels(text: &str) -> Result<LabelMap> {
    let mut labels = LabelMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line, message };
        let (key, score) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `<key>\\t<score>`".into()))?;
        let key: SegmentKey = key.trim().parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("score {:?} is not a decimal number", score.trim())))?;
        discretize_sentiment(score).map_err(|e| parse_err(e.to_string()))?;
        if labels.insert(key.clone(), score).is_some() {
            return Err(parse_err(format!("duplicate key {key}")));
        }
    }
    Ok(labels)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    parse_labels(&std::fs::read_to_string(path)?)
}

/// Records in key order, scores printed with their shortest round-trip form.
pub fn format_labels(labels: &LabelMap) -> String {
    let mut out = String::new();
    for (key, score) in labels {
        writeln!(out, "{key}\t{score}").unwrap();
    }
    out
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    std::fs::write(path, format_labels(labels))?;
    Ok(())
}
