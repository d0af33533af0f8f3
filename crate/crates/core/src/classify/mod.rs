//! Fusion classifiers: softmax heads, their trainers, the C grid search and
//! the end-to-end train/predict pipeline over fused vectors.

mod head;
mod io;
mod lbfgs;
mod logreg;
mod mlp;
mod pipeline;
mod scalers;
mod search;

pub use head::{argmax, softmax, Activation, ClassifierHead, DenseLayer, LinearSoftmaxHead, MlpHead};
pub use io::MODEL_MAGIC;
pub use lbfgs::StopReason;
pub use logreg::{logreg_train, sample_weights, ClassWeight, LogRegConfig, LogRegFit, LogRegObjective};
pub use mlp::{mlp_loss, mlp_loss_and_grad, mlp_train, EpochStats, LayerGrads, MlpConfig, MlpFit};
pub use pipeline::{
    fuse_inputs, predict_pipeline, train_pipeline, ClassifierKind, ClassifierOptions, FusionClassifier, FusionModel,
    ModalityInput, ModelMetadata, PipelineOptions, Prediction, TrainedPipeline,
};
pub use scalers::PerModalityScalers;
pub use search::{grid_search_cv, CvFold, CvOptions, CvOutcome, CvReport, CvRow, FoldScaling, DEFAULT_C_GRID, DEFAULT_FOLDS};
