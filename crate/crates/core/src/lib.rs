//! Multimodal sentiment fusion pipeline.
//!
//! Modality agents produce embedding sequences; [`aggregate`] pools them into
//! a fixed 3072-wide fused vector; [`adapter`] optionally aligns that vector
//! with a target feature space; [`classify`] scales per modality and predicts
//! one of five ordinal sentiment classes. [`agents`] runs the supervisor that
//! coordinates the modality workers at inference time.

pub mod adapter;
pub mod agents;
pub mod aggregate;
pub mod archive;
mod binio;
pub mod classify;
pub mod domain;
pub mod error;
pub mod folds;
pub mod labels;
pub mod metrics;

pub use domain::{discretize_sentiment, EmbeddingSequence, LabeledSample, ModalityId, SegmentKey, SentimentClass};
pub use error::{Error, Result};
pub use metrics::{compute_metrics, EvalReport};
