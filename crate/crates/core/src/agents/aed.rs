use std::collections::BTreeSet;

use crate::classify::{ClassifierHead, LinearSoftmaxHead};
use crate::domain::{EmbeddingSequence, ModalityId};
use crate::error::{Error, Result};

/// Size of the AudioSet event vocabulary.
pub const AUDIO_EVENT_CLASSES: usize = 527;
pub const DEFAULT_TOP_K: usize = 5;

/// Audio-event scores with their top-k ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct AedTags {
    scores: Vec<f64>,
    top_k: Vec<(usize, f64)>,
}

impl AedTags {
    /// Ranks `scores` descending; equal scores keep the lower index first.
    pub fn new(scores: Vec<f64>, k: usize) -> Result<Self> {
        if scores.len() != AUDIO_EVENT_CLASSES {
            return Err(Error::dims("audio event scores", AUDIO_EVENT_CLASSES, scores.len()));
        }
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::domain(format!("audio event score {} at {i} outside [0, 1]", scores[i])));
        }
        if k > AUDIO_EVENT_CLASSES {
            return Err(Error::domain(format!("top-k {k} exceeds {AUDIO_EVENT_CLASSES}")));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top_k = order[..k].iter().map(|&i| (i, scores[i])).collect();
        Ok(Self { scores, top_k })
    }

    /// Reads the single 527-wide frame stored for AED.
    pub fn from_sequence(seq: &EmbeddingSequence, k: usize) -> Result<Self> {
        if seq.modality() != ModalityId::Aed || seq.len() != 1 {
            return Err(Error::domain(format!(
                "AED tags need one {} frame, got {} {} frames",
                ModalityId::Aed,
                seq.len(),
                seq.modality()
            )));
        }
        Self::new(seq.frame(0).to_vec(), k)
    }

    pub fn to_sequence(&self) -> EmbeddingSequence {
        EmbeddingSequence::new(ModalityId::Aed, AUDIO_EVENT_CLASSES, self.scores.clone()).expect("validated scores")
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn top_k(&self) -> &[(usize, f64)] {
        &self.top_k
    }
}

/// Tag indices that count as speech for the gate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechCategorySet {
    indices: BTreeSet<usize>,
    names: Vec<String>,
}

impl SpeechCategorySet {
    pub fn new(entries: impl IntoIterator<Item = (usize, String)>) -> Result<Self> {
        let mut indices = BTreeSet::new();
        let mut names = Vec::new();
        for (i, name) in entries {
            if i >= AUDIO_EVENT_CLASSES {
                return Err(Error::domain(format!("speech tag index {i} outside [0, {AUDIO_EVENT_CLASSES})")));
            }
            if indices.insert(i) {
                names.push(name);
            }
        }
        if indices.is_empty() {
            return Err(Error::domain("speech category set is empty"));
        }
        Ok(Self { indices, names })
    }

    /// Speech-related AudioSet classes by their index in the 527-class
    /// ontology.
    pub fn audioset() -> Self {
        Self::new(
            [
                (0, "Speech"),
                (1, "Male speech, man speaking"),
                (2, "Female speech, woman speaking"),
                (3, "Child speech, kid speaking"),
                (4, "Conversation"),
                (5, "Narration, monologue"),
                (14, "Whispering"),
            ]
            .map(|(i, n)| (i, n.to_string())),
        )
        .expect("static set")
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for SpeechCategorySet {
    fn default() -> Self {
        Self::audioset()
    }
}

/// True iff one of the `k` highest-scoring tags is a speech category.
pub fn speech_present(tags: &AedTags, k: usize, categories: &SpeechCategorySet) -> Result<bool> {
    if k > AUDIO_EVENT_CLASSES {
        return Err(Error::domain(format!("top-k {k} exceeds {AUDIO_EVENT_CLASSES}")));
    }
    if k <= tags.top_k.len() {
        return Ok(tags.top_k[..k].iter().any(|(i, _)| categories.contains(*i)));
    }
    Ok(AedTags::new(tags.scores.clone(), k)?.top_k.iter().any(|(i, _)| categories.contains(*i)))
}

/// Keeps the scores of speech categories and zeroes everything else.
pub fn speech_filter(tags: &AedTags, categories: &SpeechCategorySet) -> Vec<f64> {
    tags.scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if categories.contains(i) { s } else { 0.0 })
        .collect()
}

/// Standalone emotion readout from audio events: a softmax head over the
/// speech-filtered tag vector. Not part of fusion.
pub fn aed_emotion(head: &LinearSoftmaxHead, tags: &AedTags, categories: &SpeechCategorySet) -> Result<Vec<f64>> {
    head.predict_proba(&speech_filter(tags, categories))
}
