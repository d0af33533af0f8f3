//! Feature-space adapter: standardization followed by a closed-form ridge map
//! from the current fused space onto a target fused space of the same width.

mod ridge;
mod scaler;

use std::path::Path;

use nalgebra::{DMatrix, DVector};

pub use ridge::{ridge_fit, RidgeSolution};
pub use scaler::{FeatureScaler, MIN_STD};

use crate::aggregate::FusedVector;
use crate::binio::{put_f64s, put_len_u32, ByteReader};
use crate::error::{Error, Result};
use crate::folds::shuffle_split;

pub const ADAPTER_MAGIC: &[u8; 4] = b"ADP1";
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MSE, RMSE and R² pooled over every entry of the two matrices.
///
/// With zero total variance R² is 1 for a perfect fit and 0 otherwise.
pub fn evaluate_regression(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<RegressionMetrics> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::domain(format!(
            "shape mismatch: truth {:?} vs prediction {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::domain("cannot evaluate an empty regression"));
    }
    let count = y_true.len() as f64;
    let ss_res: f64 = y_true.iter().zip(y_pred.iter()).map(|(t, p)| (t - p).powi(2)).sum();
    let mean = y_true.sum() / count;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    let mse = ss_res / count;
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RegressionMetrics {
        mse,
        rmse: mse.sqrt(),
        r2,
    })
}

/// `apply(x) = weights * scaler(x) + bias` over a square `D x D` map.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    scaler: FeatureScaler,
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    alpha: f64,
}

impl AdapterModel {
    pub fn new(scaler: FeatureScaler, weights: DMatrix<f64>, bias: DVector<f64>, alpha: f64) -> Result<Self> {
        let d = scaler.dim();
        if weights.shape() != (d, d) {
            return Err(Error::domain(format!(
                "adapter weights {:?} do not match scaler dimension {d}",
                weights.shape()
            )));
        }
        if bias.len() != d {
            return Err(Error::dims("adapter bias", d, bias.len()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::domain(format!("adapter alpha must be positive, got {alpha}")));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("adapter parameters must be finite"));
        }
        Ok(Self {
            scaler,
            weights,
            bias,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scaled = DVector::from_vec(self.scaler.transform(x)?);
        Ok((&self.weights * scaled + &self.bias).data.into())
    }

    pub fn apply_fused(&self, f: &FusedVector) -> Result<FusedVector> {
        FusedVector::new(self.apply(f.values())?)
    }

    pub fn apply_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let scaled = self.scaler.transform_rows(x)?;
        let mut out = scaled * self.weights.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(out)
    }

    /// `ADP1`, u32 D, f64 alpha, D means, D stds, D*D weights row-major, D bias.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(4 + 4 + 8 + 8 * (3 * d + d * d));
        out.extend_from_slice(ADAPTER_MAGIC);
        put_len_u32(&mut out, d, "adapter dimension")?;
        put_f64s(&mut out, [self.alpha]);
        put_f64s(&mut out, self.scaler.means().iter().copied());
        put_f64s(&mut out, self.scaler.stds().iter().copied());
        // nalgebra is column-major; the transpose's storage is our row-major order.
        put_f64s(&mut out, self.weights.transpose().iter().copied());
        put_f64s(&mut out, self.bias.iter().copied());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let model = Self::decode_from(&mut r)?;
        r.finish("adapter model")?;
        Ok(model)
    }

    pub(crate) fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let start = r.offset();
        r.expect_magic(ADAPTER_MAGIC)?;
        let d = r.u32("adapter dimension")? as usize;
        if d == 0 {
            return Err(Error::format(start + 4, "adapter dimension is zero"));
        }
        let needed = d
            .checked_mul(d)
            .and_then(|dd| dd.checked_add(3 * d))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| Error::format(start + 4, "adapter dimension overflows"))?;
        if r.remaining() < needed {
            return Err(Error::format(
                r.offset(),
                format!("adapter body truncated: need {needed} bytes for D={d}, {} left", r.remaining()),
            ));
        }
        let alpha = r.f64("adapter alpha")?;
        let means = r.f64_vec(d, "adapter means")?;
        let stds = r.f64_vec(d, "adapter stds")?;
        let weights = DMatrix::from_row_slice(d, d, &r.f64_vec(d * d, "adapter weights")?);
        let bias = DVector::from_vec(r.f64_vec(d, "adapter bias")?);
        let scaler = FeatureScaler::from_parts(means, stds).map_err(|e| Error::format(start, e.to_string()))?;
        Self::new(scaler, weights, bias, alpha).map_err(|e| Error::format(start, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Outcome of [`adapter_train`].
#[derive(Debug, Clone)]
pub struct AdapterTraining {
    pub model: AdapterModel,
    pub validation: RegressionMetrics,
    pub n_train: usize,
    pub n_val: usize,
}

/// Fits scaler and ridge map on a seeded training split of row-aligned
/// `current`/`target` matrices and scores the held-out rows.
pub fn adapter_train(
    current: &DMatrix<f64>,
    target: &DMatrix<f64>,
    alpha: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<AdapterTraining> {
    if current.shape() != target.shape() {
        return Err(Error::domain(format!(
            "current {:?} and target {:?} are not row-aligned square maps",
            current.shape(),
            target.shape()
        )));
    }
    let n = current.nrows();
    let (train, val) = shuffle_split(n, val_fraction, seed)?;
    if train.len() < 2 || val.len() < 2 {
        return Err(Error::domain(format!(
            "adapter split of {n} rows gives {} train / {} validation; both need >= 2",
            train.len(),
            val.len()
        )));
    }
    let x_train = current.select_rows(&train);
    let scaler = FeatureScaler::fit(&x_train)?;
    let solution = ridge_fit(&scaler.transform_rows(&x_train)?, &target.select_rows(&train), alpha)?;
    let model = AdapterModel::new(scaler, solution.weights, solution.bias, alpha)?;
    let pred = model.apply_rows(&current.select_rows(&val))?;
    let validation = evaluate_regression(&target.select_rows(&val), &pred)?;
    Ok(AdapterTraining {
        model,
        validation,
        n_train: train.len(),
        n_val: val.len(),
    })
}

/// Trains one adapter per alpha and keeps the best validation R²; ties go to
/// the smaller alpha. Returns the winner and the `(alpha, metrics)` table.
pub fn adapter_search(
    current: &DMatrix<f64>,
    target: &DMatrix<f64>,
    alphas: &[f64],
    val_fraction: f64,
    seed: u64,
) -> Result<(AdapterTraining, Vec<(f64, RegressionMetrics)>)> {
    if alphas.is_empty() {
        return Err(Error::domain("alpha grid is empty"));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut table = Vec::with_capacity(sorted.len());
    let mut best: Option<AdapterTraining> = None;
    for alpha in sorted {
        let run = adapter_train(current, target, alpha, val_fraction, seed)?;
        table.push((alpha, run.validation));
        if best.as_ref().is_none_or(|b| run.validation.r2 > b.validation.r2) {
            best = Some(run);
        }
    }
    Ok((best.expect("non-empty grid"), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::FUSED_DIM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn regression_metrics_by_hand() {
        let t = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let p = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let m = evaluate_regression(&t, &p).unwrap();
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.r2, 0.0);
        let m = evaluate_regression(&t, &t).unwrap();
        assert_eq!((m.mse, m.r2), (0.0, 1.0));
        let flat = DMatrix::from_element(3, 2, 4.0);
        assert_eq!(evaluate_regression(&flat, &flat).unwrap().r2, 1.0);
        assert_eq!(evaluate_regression(&flat, &(flat.clone() * 2.0)).unwrap().r2, 0.0);
        assert!(evaluate_regression(&t, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn regression_metrics_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (n, k) = (rng.random_range(1..20), rng.random_range(1..6));
            let t = gaussian(n, k, &mut rng);
            let p = gaussian(n, k, &mut rng);
            let m = evaluate_regression(&t, &p).unwrap();
            let (mut sum, mut sq, mut count) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..k {
                    sum += t[(i, j)];
                    sq += (t[(i, j)] - p[(i, j)]) * (t[(i, j)] - p[(i, j)]);
                    count += 1.0;
                }
            }
            let mean = sum / count;
            let mut tot = 0.0;
            for i in 0..n {
                for j in 0..k {
                    tot += (t[(i, j)] - mean) * (t[(i, j)] - mean);
                }
            }
            assert!((m.mse - sq / count).abs() < 1e-12);
            assert!((m.r2 - (1.0 - sq / tot)).abs() < 1e-12);
            assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse.max(1e-300));
        }
    }

    #[test]
    fn identity_and_permutation_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(120, 10, &mut rng);
        let run = adapter_train(&x, &x, 1e-9, 0.2, 3).unwrap();
        assert!(run.validation.r2 >= 1.0 - 1e-6);
        assert_eq!((run.n_train, run.n_val), (96, 24));
        let row: Vec<f64> = x.row(0).iter().copied().collect();
        let back = run.model.apply(&row).unwrap();
        for (a, b) in back.iter().zip(&row) {
            assert!((a - b).abs() < 1e-6);
        }

        let perm: Vec<usize> = vec![3, 1, 9, 0, 2, 8, 4, 7, 5, 6];
        let y = x.select_columns(&perm);
        let run = adapter_train(&x, &y, 1e-9, 0.2, 3).unwrap();
        assert!(run.validation.r2 >= 1.0 - 1e-6);
    }

    #[test]
    fn linear_map_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (n, d, sigma) = (300, 16, 0.01);
        let a = gaussian(d, d, &mut rng);
        let x = gaussian(n, d, &mut rng);
        let mut y = &x * a.transpose() + gaussian(n, d, &mut rng) * sigma;
        for mut row in y.row_iter_mut() {
            row.add_scalar_mut(0.5);
        }
        let run = adapter_train(&x, &y, 1e-6, 0.2, 5).unwrap();
        assert!(run.validation.rmse <= 2.0 * sigma, "rmse {}", run.validation.rmse);
        assert!(run.validation.r2 > 0.99);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let d = 4;
        let bias = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let m = AdapterModel::new(FeatureScaler::identity(d), DMatrix::zeros(d, d), bias.clone(), 1.0).unwrap();
        for x in [[0.0; 4], [9.0, -1.0, 2.0, 7.0]] {
            assert_eq!(m.apply(&x).unwrap(), bias.as_slice());
        }
        assert!(matches!(m.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn apply_matches_triple_loop_oracle_and_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 24;
        let x = gaussian(40, d, &mut rng);
        let y = gaussian(40, d, &mut rng);
        let model = adapter_train(&x, &y, 0.5, 0.25, 2).unwrap().model;
        let (w, b) = (model.weights(), model.bias());
        let (mu, sd) = (model.scaler().means(), model.scaler().stds());
        for _ in 0..5 {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let got = model.apply(&v).unwrap();
            for i in 0..d {
                let mut acc = b[i];
                for j in 0..d {
                    acc += w[(i, j)] * ((v[j] - mu[j]) / sd[j]);
                }
                assert!((got[i] - acc).abs() < 1e-10);
            }
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let lambda = rng.random_range(-1.0..2.0);
            let mix: Vec<f64> = v.iter().zip(&u).map(|(a, c)| lambda * a + (1.0 - lambda) * c).collect();
            let lhs = model.apply(&mix).unwrap();
            let (av, au) = (model.apply(&v).unwrap(), model.apply(&u).unwrap());
            for i in 0..d {
                assert!((lhs[i] - (lambda * av[i] + (1.0 - lambda) * au[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_columns_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = gaussian(60, 6, &mut rng) * 3.0;
        let run = adapter_train(&x, &x, 1.0, 0.25, 9).unwrap();
        let (train, _) = shuffle_split(60, 0.25, 9).unwrap();
        let z = run.model.scaler().transform_rows(&x.select_rows(&train)).unwrap();
        for col in z.column_iter() {
            let m = col.mean();
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn split_too_small() {
        let x = DMatrix::zeros(4, 2);
        assert!(adapter_train(&x, &x, 1.0, 0.1, 0).is_err());
        assert!(adapter_train(&x, &DMatrix::zeros(4, 3), 1.0, 0.5, 0).is_err());
    }

    #[test]
    fn search_prefers_best_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = gaussian(80, 8, &mut rng);
        let (best, table) = adapter_search(&x, &x, &DEFAULT_ALPHA_GRID, 0.2, 1).unwrap();
        assert_eq!(table.len(), 5);
        assert_eq!(best.model.alpha(), 0.01);
        assert!(adapter_search(&x, &x, &[], 0.2, 1).is_err());
    }

    #[test]
    fn file_format_round_trip_and_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(20, 5, &mut rng);
        let model = adapter_train(&x, &x, 0.3, 0.25, 1).unwrap().model;
        let bytes = model.encode().unwrap();
        assert_eq!(&bytes[..4], b"ADP1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 0.3);
        // First weight entry sits after alpha, means and stds; row-major.
        let w01 = f64::from_le_bytes(bytes[16 + 80 + 8..16 + 80 + 16].try_into().unwrap());
        assert_eq!(w01, model.weights()[(0, 1)]);
        assert_eq!(bytes.len(), 16 + 8 * (3 * 5 + 25));
        assert_eq!(AdapterModel::decode(&bytes).unwrap(), model);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(AdapterModel::decode(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(AdapterModel::decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(AdapterModel::decode(&long).is_err());
    }

    #[test]
    fn fused_apply_checks_width() {
        let m = AdapterModel::new(
            FeatureScaler::identity(FUSED_DIM),
            DMatrix::identity(FUSED_DIM, FUSED_DIM),
            DVector::zeros(FUSED_DIM),
            1.0,
        )
        .unwrap();
        let f = FusedVector::new((0..FUSED_DIM).map(|i| i as f64).collect()).unwrap();
        assert_eq!(m.apply_fused(&f).unwrap(), f);
    }
}
