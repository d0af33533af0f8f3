use nalgebra::DMatrix;
use rayon::prelude::*;

use super::head::argmax;
use super::lbfgs::StopReason;
use super::logreg::{logreg_train, LogRegConfig, LogRegFit};
use super::scalers::PerModalityScalers;
use crate::error::{Error, Result};
use crate::folds::{complement, stratified_kfold};
use crate::metrics::weighted_f1;

pub const DEFAULT_C_GRID: [f64; 7] = [0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0];
pub const DEFAULT_FOLDS: usize = 5;

/// How features are standardized relative to the CV folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldScaling {
    /// Features arrive already scaled (statistics from all training rows).
    #[default]
    None,
    /// Features arrive raw; per-modality scalers are refit on each fold's
    /// training rows and again on all rows for the final model.
    PerModality,
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub grid: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    /// Solver settings; its `c` is overridden by each grid value.
    pub logreg: LogRegConfig,
    pub scaling: FoldScaling,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_C_GRID.to_vec(),
            k: DEFAULT_FOLDS,
            seed: 0,
            logreg: LogRegConfig::default(),
            scaling: FoldScaling::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvFold {
    pub c: f64,
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub weighted_f1: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub c: f64,
    pub mean_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// One row per grid value, ascending in C.
    pub rows: Vec<CvRow>,
    /// Every fold fit, ordered by (C, fold).
    pub folds: Vec<CvFold>,
    pub best_c: f64,
    pub refit_iterations: usize,
    pub refit_stop: StopReason,
}

impl CvReport {
    /// Fold fits plus the final refit.
    pub fn total_fits(&self) -> usize {
        self.folds.len() + 1
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fit: LogRegFit,
    pub report: CvReport,
    /// Scalers fitted on all rows, present under [`FoldScaling::PerModality`].
    pub scalers: Option<PerModalityScalers>,
}

fn predict_rows(fit: &LogRegFit, x: &DMatrix<f64>) -> Vec<usize> {
    let mut z = x * fit.head.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += fit.head.bias.transpose();
    }
    z.row_iter()
        .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// Stratified k-fold search over the L2 strength `C`, scored by mean weighted
/// F1. Ties go to the smaller `C`; the winner is refit on every row.
pub fn grid_search_cv(x: &DMatrix<f64>, y: &[usize], n_classes: usize, options: &CvOptions) -> Result<CvOutcome> {
    if options.grid.is_empty() {
        return Err(Error::domain("C grid is empty"));
    }
    if let Some(bad) = options.grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::domain(format!("C grid value {bad} is not positive")));
    }
    if x.nrows() != y.len() {
        return Err(Error::dims("CV labels", x.nrows(), y.len()));
    }
    let mut grid = options.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let folds = stratified_kfold(y, options.k, options.seed)?;

    let fold_data: Vec<(DMatrix<f64>, Vec<usize>, DMatrix<f64>, Vec<usize>)> = folds
        .iter()
        .map(|val_idx| {
            let train_idx = complement(y.len(), val_idx);
            let (mut xt, mut xv) = (x.select_rows(&train_idx), x.select_rows(val_idx));
            if options.scaling == FoldScaling::PerModality {
                let s = PerModalityScalers::fit(&xt)?;
                xt = s.transform_rows(&xt)?;
                xv = s.transform_rows(&xv)?;
            }
            let yt = train_idx.iter().map(|&i| y[i]).collect();
            let yv = val_idx.iter().map(|&i| y[i]).collect();
            Ok((xt, yt, xv, yv))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<CvFold> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (xt, yt, xv, yv) = &fold_data[f];
            let cfg = LogRegConfig { c, ..options.logreg.clone() };
            let fit = logreg_train(xt, yt, n_classes, &cfg)?;
            let pred = predict_rows(&fit, xv);
            Ok(CvFold {
                c,
                fold: f,
                n_train: yt.len(),
                n_val: yv.len(),
                weighted_f1: weighted_f1(&pred, yv)?,
                iterations: fit.iterations,
                stop: fit.stop,
            })
        })
        .collect::<Result<_>>()?;

    let k = folds.len();
    let rows: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &c)| CvRow {
            c,
            mean_weighted_f1: results[i * k..(i + 1) * k].iter().map(|f| f.weighted_f1).sum::<f64>() / k as f64,
        })
        .collect();
    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.mean_weighted_f1 > best.mean_weighted_f1 {
            best = row;
        }
    }
    let best_c = best.c;
    log::info!("grid search selected C = {best_c} (mean weighted F1 {:.4})", best.mean_weighted_f1);

    let (x_full, scalers) = match options.scaling {
        FoldScaling::None => (x.clone(), None),
        FoldScaling::PerModality => {
            let s = PerModalityScalers::fit(x)?;
            (s.transform_rows(x)?, Some(s))
        }
    };
    let fit = logreg_train(&x_full, y, n_classes, &LogRegConfig { c: best_c, ..options.logreg.clone() })?;
    let report = CvReport {
        rows,
        folds: results,
        best_c,
        refit_iterations: fit.iterations,
        refit_stop: fit.stop,
    };
    Ok(CvOutcome { fit, report, scalers })
}
