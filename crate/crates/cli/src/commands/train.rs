use emofuse::adapter::AdapterModel;
use emofuse::classify::{
    predict_pipeline, ClassifierKind, ClassifierOptions, CvReport, PipelineOptions, TrainedPipeline, train_pipeline,
};
use emofuse::domain::{LabeledSample, ModalityId, SegmentKey, SentimentClass};
use emofuse::folds::stratified_holdout;
use emofuse::{compute_metrics, EmbeddingSequence};
use serde::Serialize;
use std::collections::BTreeMap;

use super::Context;
use crate::data::{list_keys, load_labels, open_archive, require_exists, write_json, EvalJson, Provenance};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct CvRowJson {
    c: f64,
    mean_weighted_f1: f64,
}

#[derive(Serialize)]
struct FoldJson {
    c: f64,
    fold: usize,
    n_train: usize,
    n_val: usize,
    weighted_f1: f64,
    iterations: usize,
    stop: String,
}

#[derive(Serialize)]
struct RefitJson {
    c: f64,
    iterations: usize,
    stop: String,
}

#[derive(Serialize)]
struct CvJson {
    k: usize,
    strict: bool,
    rows: Vec<CvRowJson>,
    folds: Vec<FoldJson>,
    refit: RefitJson,
    best_c: f64,
    total_fits: usize,
}

impl CvJson {
    fn new(r: &CvReport, k: usize, strict: bool) -> Self {
        Self {
            k,
            strict,
            rows: r.rows.iter().map(|row| CvRowJson { c: row.c, mean_weighted_f1: row.mean_weighted_f1 }).collect(),
            folds: r
                .folds
                .iter()
                .map(|f| FoldJson {
                    c: f.c,
                    fold: f.fold,
                    n_train: f.n_train,
                    n_val: f.n_val,
                    weighted_f1: f.weighted_f1,
                    iterations: f.iterations,
                    stop: f.stop.to_string(),
                })
                .collect(),
            refit: RefitJson {
                c: r.best_c,
                iterations: r.refit_iterations,
                stop: r.refit_stop.to_string(),
            },
            best_c: r.best_c,
            total_fits: r.total_fits(),
        }
    }
}

#[derive(Serialize)]
struct EpochJson {
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
}

#[derive(Serialize)]
struct TrainReport {
    #[serde(flatten)]
    provenance: Provenance,
    classifier: &'static str,
    adapter: bool,
    n_train: usize,
    n_test: usize,
    train_accuracy: f64,
    cv: Option<CvJson>,
    mlp_history: Vec<EpochJson>,
    heldout: Option<EvalJson>,
}

/// Labeled segments joined with their archive records, in key order.
pub fn load_dataset(ctx: &Context) -> CliResult<Vec<LabeledSample>> {
    let cfg = &ctx.config;
    let archive = open_archive(&cfg.require_path("archive")?)?;
    let labels = load_labels(&cfg.require_path("labels")?)?;
    let missing: Vec<&SegmentKey> = labels
        .keys()
        .filter(|k| !ModalityId::FUSION.iter().all(|&m| archive.contains(k, m)))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::data(format!(
            "{} labeled segments lack FED/SER/TED records: {}",
            missing.len(),
            list_keys(missing)
        )));
    }
    labels
        .iter()
        .map(|(key, &score)| {
            let embeddings: BTreeMap<ModalityId, EmbeddingSequence> = ModalityId::FUSION
                .iter()
                .map(|&m| archive.get(key, m).map(|s| (m, s)))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::data(format!("{key}: {e}")))?;
            Ok(LabeledSample::new(key.clone(), score, embeddings)?)
        })
        .collect()
}

fn accuracy(trained: &TrainedPipeline, samples: &[LabeledSample]) -> CliResult<f64> {
    let mut correct = 0;
    for s in samples {
        correct += usize::from(predict_pipeline(&trained.model, &s.embeddings)?.class == s.class());
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let seed = cfg.seed()?;
    let kind = cfg.classifier()?;
    let pooling = cfg.pooling()?;
    let test_fraction = cfg.fraction("test_fraction")?;
    let strict = ctx.strict_cv || cfg.bool("cv.strict")?;
    let classifier = match kind {
        ClassifierKind::Logreg => ClassifierOptions::Logreg(cfg.cv(ctx.strict_cv)?),
        ClassifierKind::Mlp => ClassifierOptions::Mlp {
            config: cfg.mlp()?,
            val_fraction: cfg.fraction("mlp.val_fraction")?,
        },
    };
    let adapter = match cfg.path("adapter") {
        Some(p) => {
            require_exists(&p, "adapter")?;
            Some(AdapterModel::read(&p).map_err(|e| CliError::data(format!("adapter {}: {e}", p.display())))?)
        }
        None => None,
    };
    let dataset = load_dataset(ctx)?;
    if dataset.len() < 2 {
        return Err(CliError::data("need at least two labeled segments"));
    }

    let (train_idx, test_idx) = if test_fraction > 0.0 {
        let classes: Vec<SentimentClass> = dataset.iter().map(LabeledSample::class).collect();
        stratified_holdout(&classes, test_fraction, seed)?
    } else {
        ((0..dataset.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&train_idx), pick(&test_idx));

    let options = PipelineOptions {
        pooling,
        adapter: adapter.clone(),
        classifier,
        seed,
        config_digest: cfg.digest(),
    };
    let trained = train_pipeline(&train, &options)?;
    let train_accuracy = accuracy(&trained, &train)?;
    let heldout = if test.is_empty() {
        None
    } else {
        let mut pred = Vec::with_capacity(test.len());
        for s in &test {
            pred.push(predict_pipeline(&trained.model, &s.embeddings)?.class);
        }
        let truth: Vec<SentimentClass> = test.iter().map(LabeledSample::class).collect();
        Some(compute_metrics(&pred, &truth)?)
    };

    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    trained.model.write(&out.join("model.fus"))?;
    let k = cfg.usize("cv.k")?;
    let report = TrainReport {
        provenance: ctx.provenance("train-classifier")?,
        classifier: kind.name(),
        adapter: adapter.is_some(),
        n_train: train.len(),
        n_test: test.len(),
        train_accuracy,
        cv: trained.cv.as_ref().map(|r| CvJson::new(r, k, strict)),
        mlp_history: trained
            .mlp_history
            .iter()
            .map(|e| EpochJson {
                epoch: e.epoch,
                train_loss: e.train_loss,
                val_loss: e.val_loss,
            })
            .collect(),
        heldout: heldout.as_ref().map(EvalJson::from),
    };
    write_json(&out.join("train_report.json"), &report)?;
    if let Some(cv) = &trained.cv {
        for row in &cv.rows {
            println!("C = {:<8} mean weighted F1 {:.4}", row.c, row.mean_weighted_f1);
        }
        println!("selected C = {} ({} fits)", cv.best_c, cv.total_fits());
    }
    println!("train accuracy {train_accuracy:.4}");
    if let Some(h) = &heldout {
        println!("held-out accuracy {:.4}, weighted F1 {:.4}, MAE {:.4}", h.accuracy, h.weighted_f1, h.mae);
    }
    Ok(())
}
