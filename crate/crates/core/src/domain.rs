//! Domain types shared across the pipeline: modality tags, the five-class
//! ordinal sentiment scale, segment keys and embedding sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Input channel tag. FED, SER and TED feed the fusion classifier; AED only
/// supplies audio-event tags for the speech gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModalityId {
    Fed,
    Ser,
    Ted,
    Aed,
}

impl ModalityId {
    pub const ALL: [ModalityId; 4] = [ModalityId::Fed, ModalityId::Ser, ModalityId::Ted, ModalityId::Aed];

    /// Fusion modalities in fused-vector slice order.
    pub const FUSION: [ModalityId; 3] = [ModalityId::Fed, ModalityId::Ser, ModalityId::Ted];

    pub fn name(self) -> &'static str {
        match self {
            ModalityId::Fed => "FED",
            ModalityId::Ser => "SER",
            ModalityId::Ted => "TED",
            ModalityId::Aed => "AED",
        }
    }

    pub fn is_fusion(self) -> bool {
        self != ModalityId::Aed
    }

    /// Frame width an encoder for this modality emits. SER encoders may also
    /// emit 1024-wide frames; see [`accepts_dim`](Self::accepts_dim).
    pub fn native_dim(self) -> usize {
        match self {
            ModalityId::Fed => 512,
            ModalityId::Ser => 256,
            ModalityId::Ted => 768,
            ModalityId::Aed => 527,
        }
    }

    pub fn accepts_dim(self, dim: usize) -> bool {
        dim == self.native_dim() || (self == ModalityId::Ser && dim == 1024)
    }

    /// Position of the modality's slice inside a fused vector.
    pub fn slot(self) -> Option<usize> {
        match self {
            ModalityId::Fed => Some(0),
            ModalityId::Ser => Some(1),
            ModalityId::Ted => Some(2),
            ModalityId::Aed => None,
        }
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FED" => Ok(ModalityId::Fed),
            "SER" => Ok(ModalityId::Ser),
            "TED" => Ok(ModalityId::Ted),
            "AED" => Ok(ModalityId::Aed),
            other => Err(Error::domain(format!("unknown modality {other:?}"))),
        }
    }
}

/// Five ordinal sentiment classes over the [-3, 3] intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SentimentClass {
    VeryNegative = 0,
    Negative = 1,
    Neutral = 2,
    Positive = 3,
    VeryPositive = 4,
}

impl SentimentClass {
    pub const COUNT: usize = 5;

    pub const ALL: [SentimentClass; 5] = [
        SentimentClass::VeryNegative,
        SentimentClass::Negative,
        SentimentClass::Neutral,
        SentimentClass::Positive,
        SentimentClass::VeryPositive,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Result<Self> {
        Self::ALL
            .get(ordinal)
            .copied()
            .ok_or_else(|| Error::domain(format!("sentiment ordinal {ordinal} outside [0, 4]")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentClass::VeryNegative => "VeryNegative",
            SentimentClass::Negative => "Negative",
            SentimentClass::Neutral => "Neutral",
            SentimentClass::Positive => "Positive",
            SentimentClass::VeryPositive => "VeryPositive",
        }
    }
}

impl fmt::Display for SentimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SentimentClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown sentiment class {s:?}")))
    }
}

/// Maps a sentiment score to its ordinal class.
///
/// Bins: `[-3,-1)` very negative, `[-1,-0.3)` negative, `[-0.3,0.3]` neutral,
/// `(0.3,1]` positive, `(1,3]` very positive. A score of exactly -0.3 lands in
/// the closed neutral bin.
pub fn discretize_sentiment(score: f64) -> Result<SentimentClass> {
    if !score.is_finite() || !(-3.0..=3.0).contains(&score) {
        return Err(Error::domain(format!("sentiment score {score} outside [-3, 3]")));
    }
    let class = if score < -1.0 {
        SentimentClass::VeryNegative
    } else if score < -0.3 {
        SentimentClass::Negative
    } else if score <= 0.3 {
        SentimentClass::Neutral
    } else if score <= 1.0 {
        SentimentClass::Positive
    } else {
        SentimentClass::VeryPositive
    };
    Ok(class)
}

/// Segment identifier serialized as `<video_id>_<segment_index>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentKey {
    pub video_id: String,
    pub segment_index: u64,
}

impl SegmentKey {
    pub fn new(video_id: impl Into<String>, segment_index: u64) -> Self {
        Self {
            video_id: video_id.into(),
            segment_index,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.video_id, self.segment_index)
    }
}

impl FromStr for SegmentKey {
    type Err = Error;

    /// Splits on the last underscore; video ids may themselves contain `_`.
    fn from_str(s: &str) -> Result<Self> {
        let (video, index) = s
            .rsplit_once('_')
            .ok_or_else(|| Error::domain(format!("segment key {s:?} has no '_' separator")))?;
        if video.is_empty() || video.chars().any(char::is_whitespace) {
            return Err(Error::domain(format!("segment key {s:?} has an invalid video id")));
        }
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::domain(format!("segment key {s:?} has a non-numeric index")));
        }
        let segment_index = index
            .parse()
            .map_err(|_| Error::domain(format!("segment index in {s:?} overflows")))?;
        Ok(SegmentKey::new(video, segment_index))
    }
}

/// A `T x d` time series of embedding frames, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    modality: ModalityId,
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSequence {
    pub fn new(modality: ModalityId, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("embedding dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value at frame {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            modality,
            rows: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn from_frames(modality: ModalityId, frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::domain("cannot infer dimension from zero frames"))?;
        if let Some(bad) = frames.iter().position(|f| f.len() != dim) {
            return Err(Error::domain(format!(
                "frame {bad} has width {} but frame 0 has width {dim}",
                frames[bad].len()
            )));
        }
        Self::new(modality, dim, frames.concat())
    }

    /// A placeholder with no frames.
    pub fn empty(modality: ModalityId, dim: usize) -> Result<Self> {
        Self::new(modality, dim, Vec::new())
    }

    pub fn modality(&self) -> ModalityId {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One training example: a labeled segment with its per-modality sequences.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub key: SegmentKey,
    pub score: f64,
    pub embeddings: BTreeMap<ModalityId, EmbeddingSequence>,
}

impl LabeledSample {
    pub fn new(
        key: SegmentKey,
        score: f64,
        embeddings: BTreeMap<ModalityId, EmbeddingSequence>,
    ) -> Result<Self> {
        if !score.is_finite() || !(-3.0..=3.0).contains(&score) {
            return Err(Error::domain(format!("score {score} for {key} outside [-3, 3]")));
        }
        for (&modality, seq) in &embeddings {
            if seq.modality() != modality {
                return Err(Error::domain(format!(
                    "{key}: sequence tagged {} stored under {modality}",
                    seq.modality()
                )));
            }
        }
        Ok(Self {
            key,
            score,
            embeddings,
        })
    }

    pub fn class(&self) -> SentimentClass {
        discretize_sentiment(self.score).expect("score validated at construction")
    }

    /// Fails unless FED, SER and TED are all present.
    pub fn require_fusion_modalities(&self) -> Result<()> {
        for m in ModalityId::FUSION {
            if !self.embeddings.contains_key(&m) {
                return Err(Error::domain(format!("{}: missing {m} embeddings", self.key)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_follow_interval_notation() {
        use SentimentClass::*;
        let cases = [
            (-3.0, VeryNegative),
            (-2.0, VeryNegative),
            (-1.0000001, VeryNegative),
            (-1.0, Negative),
            (-0.3000001, Negative),
            (-0.3, Neutral),
            (0.0, Neutral),
            (0.3, Neutral),
            (0.3000001, Positive),
            (1.0, Positive),
            (1.0000001, VeryPositive),
            (3.0, VeryPositive),
        ];
        for (score, want) in cases {
            assert_eq!(discretize_sentiment(score).unwrap(), want, "score {score}");
        }
    }

    #[test]
    fn discretize_rejects_out_of_range() {
        for bad in [-3.0001, 3.0001, f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(discretize_sentiment(bad).is_err());
        }
    }

    #[test]
    fn segment_key_round_trip() {
        let key: SegmentKey = "-3g5yACwYnA_10".parse().unwrap();
        assert_eq!(key.video_id, "-3g5yACwYnA");
        assert_eq!(key.segment_index, 10);
        assert_eq!(key.to_string(), "-3g5yACwYnA_10");

        let key: SegmentKey = "a_b_c_7".parse().unwrap();
        assert_eq!(key.video_id, "a_b_c");
        assert_eq!(key.to_string(), "a_b_c_7");

        for bad in ["nounderscore", "_3", "vid_", "vid_x1", "vid_-1"] {
            assert!(bad.parse::<SegmentKey>().is_err(), "{bad}");
        }
    }

    #[test]
    fn sequence_rejects_non_finite_and_ragged() {
        assert!(EmbeddingSequence::new(ModalityId::Fed, 2, vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingSequence::new(ModalityId::Fed, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(EmbeddingSequence::new(ModalityId::Fed, 0, vec![]).is_err());
        assert!(EmbeddingSequence::from_frames(ModalityId::Ser, &[vec![1.0], vec![1.0, 2.0]]).is_err());

        let seq = EmbeddingSequence::from_frames(ModalityId::Ser, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.dim(), 2);
        assert_eq!(seq.frame(1), &[3.0, 4.0]);
        assert!(EmbeddingSequence::empty(ModalityId::Ted, 768).unwrap().is_empty());
    }

    #[test]
    fn modality_names_parse() {
        for m in ModalityId::ALL {
            assert_eq!(m.name().parse::<ModalityId>().unwrap(), m);
        }
        assert_eq!(ModalityId::Aed.slot(), None);
        assert_eq!(ModalityId::Ted.slot(), Some(2));
    }

    #[test]
    fn sample_requires_valid_score() {
        let key = SegmentKey::new("v", 0);
        assert!(LabeledSample::new(key.clone(), 3.5, BTreeMap::new()).is_err());
        let s = LabeledSample::new(key, -0.3, BTreeMap::new()).unwrap();
        assert_eq!(s.class(), SentimentClass::Neutral);
        assert!(s.require_fusion_modalities().is_err());
    }
}
