use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::head::{argmax, ClassifierHead, LinearSoftmaxHead, MlpHead};
use super::mlp::{mlp_train, EpochStats, MlpConfig};
use super::scalers::PerModalityScalers;
use super::search::{grid_search_cv, CvOptions, CvReport, FoldScaling};
use crate::adapter::AdapterModel;
use crate::aggregate::{concat3, uniform_from_sequence, FusedVector, PoolingModes, UniformVector, FUSED_DIM};
use crate::domain::{EmbeddingSequence, LabeledSample, ModalityId, SentimentClass};
use crate::error::{Error, Result};
use crate::folds::shuffle_split;

const K: usize = SentimentClass::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Logreg,
    Mlp,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logreg" => Ok(ClassifierKind::Logreg),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::domain(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionClassifier {
    Linear(LinearSoftmaxHead),
    Mlp(MlpHead),
}

impl FusionClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            FusionClassifier::Linear(_) => ClassifierKind::Logreg,
            FusionClassifier::Mlp(_) => ClassifierKind::Mlp,
        }
    }

    fn head(&self) -> &dyn ClassifierHead {
        match self {
            FusionClassifier::Linear(h) => h,
            FusionClassifier::Mlp(h) => h,
        }
    }
}

impl ClassifierHead for FusionClassifier {
    fn input_dim(&self) -> usize {
        self.head().input_dim()
    }

    fn n_classes(&self) -> usize {
        self.head().n_classes()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head().predict_proba(x)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMetadata {
    /// Hex digest of the configuration that produced the model.
    pub config_digest: String,
    pub seed: u64,
    pub pooling: PoolingModes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub scalers: PerModalityScalers,
    pub classifier: FusionClassifier,
    pub adapter: Option<AdapterModel>,
    pub metadata: ModelMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: SentimentClass,
    pub probabilities: [f64; K],
}

/// A fusion modality's input at inference time. `Zeroed` stands in for a
/// gated or failed modality and contributes an all-zero uniform slice.
#[derive(Debug, Clone, Copy)]
pub enum ModalityInput<'a> {
    Sequence(&'a EmbeddingSequence),
    Zeroed,
}

fn uniform_input(input: ModalityInput<'_>, modality: ModalityId, pooling: &PoolingModes) -> Result<UniformVector> {
    match input {
        ModalityInput::Sequence(seq) if !seq.is_empty() => {
            if seq.modality() != modality {
                return Err(Error::domain(format!("{modality} slot received a {} sequence", seq.modality())));
            }
            uniform_from_sequence(seq, pooling.get(modality))
        }
        _ => UniformVector::zeros(modality),
    }
}

/// Pool, pad/truncate and concatenate the three fusion modalities.
pub fn fuse_inputs(inputs: [ModalityInput<'_>; 3], pooling: &PoolingModes) -> Result<FusedVector> {
    let [fed, ser, ted] = inputs;
    concat3(
        &uniform_input(fed, ModalityId::Fed, pooling)?,
        &uniform_input(ser, ModalityId::Ser, pooling)?,
        &uniform_input(ted, ModalityId::Ted, pooling)?,
    )
}

fn sample_fused(sample: &LabeledSample, pooling: &PoolingModes) -> Result<FusedVector> {
    sample.require_fusion_modalities()?;
    let seq = |m: ModalityId| {
        let s = &sample.embeddings[&m];
        if s.is_empty() {
            return Err(Error::domain(format!("{}: {m} sequence has no frames", sample.key)));
        }
        uniform_from_sequence(s, pooling.get(m))
    };
    concat3(&seq(ModalityId::Fed)?, &seq(ModalityId::Ser)?, &seq(ModalityId::Ted)?)
}

fn adapt(adapter: Option<&AdapterModel>, fused: FusedVector) -> Result<Vec<f64>> {
    match adapter {
        Some(a) => a.apply(fused.values()),
        None => Ok(fused.into_values()),
    }
}

impl FusionModel {
    pub fn kind(&self) -> ClassifierKind {
        self.classifier.kind()
    }

    /// The vector the classifier actually sees: optional adapter, then the
    /// per-modality scalers.
    pub fn processed_features(&self, fused: &FusedVector) -> Result<Vec<f64>> {
        let adapted = adapt(self.adapter.as_ref(), fused.clone())?;
        self.scalers.transform(&adapted)
    }

    /// Debug hook exposing [`processed_features`](Self::processed_features)
    /// for raw modality inputs.
    pub fn debug_features(&self, inputs: [ModalityInput<'_>; 3]) -> Result<Vec<f64>> {
        self.processed_features(&fuse_inputs(inputs, &self.metadata.pooling)?)
    }

    pub fn predict_fused(&self, fused: &FusedVector) -> Result<Prediction> {
        let probs = self.classifier.predict_proba(&self.processed_features(fused)?)?;
        let probabilities: [f64; K] = probs
            .try_into()
            .map_err(|p: Vec<f64>| Error::dims("classifier output", K, p.len()))?;
        Ok(Prediction {
            class: SentimentClass::from_ordinal(argmax(&probabilities))?,
            probabilities,
        })
    }

    pub fn predict(&self, inputs: [ModalityInput<'_>; 3]) -> Result<Prediction> {
        self.predict_fused(&fuse_inputs(inputs, &self.metadata.pooling)?)
    }
}

/// Classifies one segment from its FED/SER/TED sequences using the model's
/// own pooling modes.
pub fn predict_pipeline(model: &FusionModel, embeddings: &BTreeMap<ModalityId, EmbeddingSequence>) -> Result<Prediction> {
    let get = |m: ModalityId| {
        embeddings
            .get(&m)
            .map(ModalityInput::Sequence)
            .ok_or_else(|| Error::domain(format!("missing {m} embeddings")))
    };
    model.predict([get(ModalityId::Fed)?, get(ModalityId::Ser)?, get(ModalityId::Ted)?])
}

#[derive(Debug, Clone)]
pub enum ClassifierOptions {
    Logreg(CvOptions),
    Mlp {
        config: MlpConfig,
        /// Share of rows held out to pick the best checkpoint; 0 keeps the
        /// final weights.
        val_fraction: f64,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub pooling: PoolingModes,
    pub adapter: Option<AdapterModel>,
    pub classifier: ClassifierOptions,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub model: FusionModel,
    pub cv: Option<CvReport>,
    pub mlp_history: Vec<EpochStats>,
    /// Row `i` is exactly what the classifier was trained on for sample `i`.
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Fits scalers and a fusion classifier: pool, pad/truncate, concatenate,
/// optionally adapt, fit per-modality scalers, scale, train.
pub fn train_pipeline(dataset: &[LabeledSample], options: &PipelineOptions) -> Result<TrainedPipeline> {
    if dataset.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let labels: Vec<usize> = dataset.iter().map(|s| s.class().ordinal()).collect();
    let mut rows = Vec::with_capacity(dataset.len() * FUSED_DIM);
    for sample in dataset {
        rows.extend(adapt(options.adapter.as_ref(), sample_fused(sample, &options.pooling)?)?);
    }
    let raw = DMatrix::from_row_slice(dataset.len(), FUSED_DIM, &rows);
    drop(rows);

    let (scalers, classifier, cv, mlp_history) = match &options.classifier {
        ClassifierOptions::Logreg(cv_opts) if cv_opts.scaling == FoldScaling::PerModality => {
            let out = grid_search_cv(&raw, &labels, K, cv_opts)?;
            let scalers = out.scalers.expect("per-modality CV returns scalers");
            (scalers, FusionClassifier::Linear(out.fit.head), Some(out.report), Vec::new())
        }
        ClassifierOptions::Logreg(cv_opts) => {
            let scalers = PerModalityScalers::fit(&raw)?;
            let x = scalers.transform_rows(&raw)?;
            let out = grid_search_cv(&x, &labels, K, cv_opts)?;
            (scalers, FusionClassifier::Linear(out.fit.head), Some(out.report), Vec::new())
        }
        ClassifierOptions::Mlp { config, val_fraction } => {
            let scalers = PerModalityScalers::fit(&raw)?;
            let x = scalers.transform_rows(&raw)?;
            let fit = if *val_fraction > 0.0 {
                let (tr, va) = shuffle_split(x.nrows(), *val_fraction, options.seed)?;
                let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
                let yva: Vec<usize> = va.iter().map(|&i| labels[i]).collect();
                let xva = x.select_rows(&va);
                mlp_train(&x.select_rows(&tr), &ytr, K, config, Some((&xva, &yva)))?
            } else {
                mlp_train(&x, &labels, K, config, None)?
            };
            let head = match fit.best {
                Some((_, best)) => best,
                None => fit.head,
            };
            (scalers, FusionClassifier::Mlp(head), None, fit.history)
        }
    };
    let features = scalers.transform_rows(&raw)?;
    let model = FusionModel {
        scalers,
        classifier,
        adapter: options.adapter.clone(),
        metadata: ModelMetadata {
            config_digest: options.config_digest.clone(),
            seed: options.seed,
            pooling: options.pooling,
        },
    };
    Ok(TrainedPipeline {
        model,
        cv,
        mlp_history,
        features,
        labels,
    })
}
