use emofuse::adapter::{adapter_search, adapter_train, RegressionMetrics, DEFAULT_ALPHA_GRID};
use emofuse::domain::SegmentKey;
use serde::Serialize;

use super::Context;
use crate::data::{fused_matrix, fusion_keys, open_archive, write_json, Provenance};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct Metrics {
    mse: f64,
    rmse: f64,
    r2: f64,
}

impl From<RegressionMetrics> for Metrics {
    fn from(m: RegressionMetrics) -> Self {
        Self {
            mse: m.mse,
            rmse: m.rmse,
            r2: m.r2,
        }
    }
}

#[derive(Serialize)]
struct SearchRow {
    alpha: f64,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct AdapterReport {
    #[serde(flatten)]
    provenance: Provenance,
    intersection: usize,
    n_train: usize,
    n_val: usize,
    alpha: f64,
    validation: Metrics,
    search: Vec<SearchRow>,
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let seed = cfg.seed()?;
    let pooling = cfg.pooling()?;
    let val_fraction = cfg.fraction("adapter.val_fraction")?;
    let search = cfg.bool("adapter.search")?;
    let alpha = cfg.f64("adapter.alpha")?;
    let current = open_archive(&cfg.require_path("archive")?)?;
    let target = open_archive(&cfg.require_path("target_archive")?)?;

    let keys: Vec<SegmentKey> = fusion_keys(&current).intersection(&fusion_keys(&target)).cloned().collect();
    if keys.is_empty() {
        return Err(CliError::data(
            "zero intersection: no segment has FED, SER and TED records in both archives",
        ));
    }
    let x = fused_matrix(&current, &keys, &pooling)?;
    let y = fused_matrix(&target, &keys, &pooling)?;
    let (run, table) = if search {
        adapter_search(&x, &y, &DEFAULT_ALPHA_GRID, val_fraction, seed)?
    } else {
        let run = adapter_train(&x, &y, alpha, val_fraction, seed)?;
        let row = (alpha, run.validation);
        (run, vec![row])
    };

    let out = cfg.out_dir();
    let path = out.join("adapter.adp");
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    run.model.write(&path)?;
    let report = AdapterReport {
        provenance: ctx.provenance("train-adapter")?,
        intersection: keys.len(),
        n_train: run.n_train,
        n_val: run.n_val,
        alpha: run.model.alpha(),
        validation: run.validation.into(),
        search: table.into_iter().map(|(alpha, m)| SearchRow { alpha, metrics: m.into() }).collect(),
    };
    write_json(&out.join("adapter_report.json"), &report)?;
    println!(
        "adapter alpha {} on {} segments: validation R2 {:.6}, RMSE {:.6}",
        run.model.alpha(),
        keys.len(),
        run.validation.r2,
        run.validation.rmse
    );
    Ok(())
}
