use std::collections::BTreeMap;

use emofuse::agents::{derived_rng, synthetic_speech, BackendOutput, SegmentRequest, SyntheticBackend};
use emofuse::archive::ArchiveWriter;
use emofuse::domain::{ModalityId, SegmentKey, SentimentClass};
use emofuse::labels::{format_labels, LabelMap};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::Context;
use crate::data::{write_file, write_json, Provenance};
use crate::error::{CliError, CliResult};

const K: usize = SentimentClass::COUNT;

/// Closed score intervals strictly inside each class's bin, 0.05 away from
/// every boundary so rounding never crosses one.
const SCORE_RANGES: [(f64, f64); K] = [(-3.0, -1.05), (-0.95, -0.35), (-0.25, 0.25), (0.35, 0.95), (1.05, 3.0)];

/// Splits `n` by `weights` with the largest-remainder rule; ties go to the
/// lower class.
pub fn allocate(n: usize, weights: &[f64; K]) -> [usize; K] {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts = [0usize; K];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..K).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        counts[c] += 1;
    }
    counts
}

/// A score drawn inside `class`'s bin, rounded to three decimals.
pub fn sample_score<R: Rng>(class: SentimentClass, rng: &mut R) -> f64 {
    let (lo, hi) = SCORE_RANGES[class.ordinal()];
    (rng.random_range(lo..=hi) * 1000.0).round() / 1000.0
}

pub fn synthetic_key(i: usize) -> SegmentKey {
    SegmentKey::new(format!("syn{:04}", i / 5), (i % 5) as u64)
}

#[derive(Serialize)]
struct SyntheticReport {
    #[serde(flatten)]
    provenance: Provenance,
    segments: usize,
    class_counts: BTreeMap<&'static str, usize>,
    speech_absent: usize,
    ser_dim: usize,
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let seed = cfg.seed()?;
    let n = cfg.usize("synthetic.segments")?;
    if n == 0 {
        return Err(CliError::config("synthetic.segments must be positive"));
    }
    let profile = cfg.synthetic()?;
    let counts = allocate(n, &cfg.class_balance()?);
    let out = cfg.out_dir();

    let mut classes: Vec<SentimentClass> =
        SentimentClass::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, counts[c.ordinal()])).collect();
    classes.shuffle(&mut derived_rng(seed, &["classes"]));
    let mut score_rng = derived_rng(seed, &["scores"]);

    let backends: Vec<SyntheticBackend> = ModalityId::ALL
        .iter()
        .map(|&m| SyntheticBackend::new(seed, m, profile.clone()))
        .collect::<Result<_, _>>()?;
    let mut writer = ArchiveWriter::new();
    let mut labels = LabelMap::new();
    let mut speech_absent = 0;
    for (i, &class) in classes.iter().enumerate() {
        let key = synthetic_key(i);
        let speech = synthetic_speech(seed, &key, profile.speech_absent_fraction);
        speech_absent += usize::from(!speech);
        let req = SegmentRequest::new(key.clone()).with_class(class).with_speech(speech);
        for b in &backends {
            let seq = match b.generate(&req) {
                BackendOutput::Sequence(s) => s,
                BackendOutput::Tags(t) => t.to_sequence(),
            };
            writer.add(&key, &seq)?;
        }
        labels.insert(key, sample_score(class, &mut score_rng));
    }
    let archive_dir = out.join("archive");
    std::fs::create_dir_all(&archive_dir).map_err(|e| CliError::io(format!("creating {}", archive_dir.display()), e))?;
    writer.write(&archive_dir)?;
    write_file(&out.join("labels.tsv"), format_labels(&labels).as_bytes())?;

    let report = SyntheticReport {
        provenance: ctx.provenance("gen-synthetic")?,
        segments: n,
        class_counts: SentimentClass::ALL.iter().map(|c| (c.name(), counts[c.ordinal()])).collect(),
        speech_absent,
        ser_dim: profile.ser_dim,
    };
    write_json(&out.join("synthetic_report.json"), &report)?;
    println!("wrote {n} segments to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use emofuse::discretize_sentiment;

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(100, &[1.0; 5]), [20; 5]);
        assert_eq!(allocate(7, &[1.0; 5]), [2, 2, 1, 1, 1]);
        assert_eq!(allocate(10, &[0.0, 1.0, 0.0, 0.0, 3.0]), [0, 3, 0, 0, 7]);
        for n in 0..60 {
            assert_eq!(allocate(n, &[0.3, 1.7, 2.0, 0.1, 5.0]).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn scores_stay_in_their_bins() {
        let mut rng = derived_rng(1, &["test"]);
        for _ in 0..2000 {
            for c in SentimentClass::ALL {
                assert_eq!(discretize_sentiment(sample_score(c, &mut rng)).unwrap(), c);
            }
        }
    }
}
