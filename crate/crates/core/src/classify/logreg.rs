use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::head::LinearSoftmaxHead;
use super::lbfgs::{self, StopReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassWeight {
    /// `w_c = N / (K_present * N_c)`.
    #[default]
    Balanced,
    None,
}

impl fmt::Display for ClassWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassWeight::Balanced => "balanced",
            ClassWeight::None => "none",
        })
    }
}

impl FromStr for ClassWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "balanced" => Ok(ClassWeight::Balanced),
            "none" => Ok(ClassWeight::None),
            other => Err(Error::domain(format!("unknown class weighting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    /// Inverse regularization strength; the penalty is `||W||^2 / (2C)`.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the gradient infinity-norm drops below this.
    pub tol: f64,
    pub class_weight: ClassWeight,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 5000,
            tol: 1e-4,
            class_weight: ClassWeight::Balanced,
        }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::domain(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::domain(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Per-sample weights for the chosen class weighting.
pub fn sample_weights(y: &[usize], n_classes: usize, mode: ClassWeight) -> Vec<f64> {
    match mode {
        ClassWeight::None => vec![1.0; y.len()],
        ClassWeight::Balanced => {
            let mut counts = vec![0usize; n_classes];
            for &c in y {
                counts[c] += 1;
            }
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            let n = y.len() as f64;
            y.iter().map(|&c| n / (present * counts[c] as f64)).collect()
        }
    }
}

/// Class-weighted multinomial cross-entropy (summed over samples) plus
/// `||W||_F^2 / (2C)`; the bias is not penalized.
pub struct LogRegObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [usize],
    weights: Vec<f64>,
    n_classes: usize,
    inv_c: f64,
}

impl<'a> LogRegObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [usize], n_classes: usize, class_weight: ClassWeight, c: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dims("logistic regression labels", x.nrows(), y.len()));
        }
        if n_classes < 2 {
            return Err(Error::domain("logistic regression needs at least 2 classes"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::domain(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            x,
            y,
            weights: sample_weights(y, n_classes, class_weight),
            n_classes,
            inv_c: 1.0 / c,
        })
    }

    /// Objective value and gradients `(dW, db)` at `head`.
    pub fn evaluate(&self, head: &LinearSoftmaxHead) -> (f64, DMatrix<f64>, DVector<f64>) {
        self.evaluate_parts(&head.weights, &head.bias)
    }

    fn evaluate_parts(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> (f64, DMatrix<f64>, DVector<f64>) {
        let mut g = self.x * w.transpose();
        let mut loss = 0.0;
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row += b.transpose();
            let max = row.max();
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let yi = self.y[i];
            let si = self.weights[i];
            loss += si * (lse - row[yi]);
            // Row becomes s_i (p_i - onehot(y_i)).
            row.apply(|z| *z = si * (*z - lse).exp());
            row[yi] -= si;
        }
        loss += 0.5 * self.inv_c * w.norm_squared();
        let grad_w = g.tr_mul(self.x) + w * self.inv_c;
        let grad_b = DVector::from_iterator(self.n_classes, g.column_iter().map(|c| c.sum()));
        (loss, grad_w, grad_b)
    }

    fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let kd = self.n_classes * self.x.ncols();
        (
            DMatrix::from_column_slice(self.n_classes, self.x.ncols(), &theta.as_slice()[..kd]),
            DVector::from_column_slice(&theta.as_slice()[kd..]),
        )
    }

    fn flat(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (w, b) = self.unpack(theta);
        let (f, gw, gb) = self.evaluate_parts(&w, &b);
        let mut g = Vec::with_capacity(theta.len());
        g.extend_from_slice(gw.as_slice());
        g.extend_from_slice(gb.as_slice());
        (f, DVector::from_vec(g))
    }
}

#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub head: LinearSoftmaxHead,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Fits a `K`-class softmax regression from a zero start with L-BFGS.
pub fn logreg_train(x: &DMatrix<f64>, y: &[usize], n_classes: usize, config: &LogRegConfig) -> Result<LogRegFit> {
    config.validate()?;
    if x.nrows() < 2 {
        return Err(Error::domain(format!("logistic regression needs >= 2 samples, got {}", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("logistic regression features contain non-finite values"));
    }
    let objective = LogRegObjective::new(x, y, n_classes, config.class_weight, config.c)?;
    let dim = n_classes * (x.ncols() + 1);
    let min = lbfgs::minimize(|t| objective.flat(t), DVector::zeros(dim), config.max_iter, config.tol);
    if !min.value.is_finite() || min.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    let (w, b) = objective.unpack(&min.x);
    Ok(LogRegFit {
        head: LinearSoftmaxHead::new(w, b)?,
        objective: min.value,
        iterations: min.iterations,
        stop: min.stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::head::ClassifierHead;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_head(k: usize, d: usize, rng: &mut ChaCha8Rng) -> LinearSoftmaxHead {
        LinearSoftmaxHead::new(
            DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0)),
            DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(683);
        let (n, d, k) = (6, 8, 3);
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let y = [0, 1, 2, 0, 0, 1];
        for cw in [ClassWeight::None, ClassWeight::Balanced] {
            let obj = LogRegObjective::new(&x, &y, k, cw, 0.7).unwrap();
            let head = random_head(k, d, &mut rng);
            let (_, gw, gb) = obj.evaluate(&head);
            let h = 1e-5;
            let check = |analytic: f64, bump: &dyn Fn(f64) -> LinearSoftmaxHead| {
                let numeric = (obj.evaluate(&bump(h)).0 - obj.evaluate(&bump(-h)).0) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "analytic {analytic} numeric {numeric}");
            };
            for i in 0..k {
                for j in 0..d {
                    check(gw[(i, j)], &|e| {
                        let mut p = head.clone();
                        p.weights[(i, j)] += e;
                        p
                    });
                }
                check(gb[i], &|e| {
                    let mut p = head.clone();
                    p.bias[i] += e;
                    p
                });
            }
        }
    }

    #[test]
    fn loss_is_convex_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(20, 5, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let obj = LogRegObjective::new(&x, &y, 4, ClassWeight::Balanced, 2.0).unwrap();
        for _ in 0..50 {
            let a = random_head(4, 5, &mut rng);
            let b = random_head(4, 5, &mut rng);
            let mid = LinearSoftmaxHead::new((&a.weights + &b.weights) / 2.0, (&a.bias + &b.bias) / 2.0).unwrap();
            let (fa, fb, fm) = (obj.evaluate(&a).0, obj.evaluate(&b).0, obj.evaluate(&mid).0);
            assert!(fm <= 0.5 * (fa + fb) + 1e-9);
        }
    }

    #[test]
    fn balanced_equals_unweighted_when_classes_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(15, 4, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..15).map(|i| i % 5).collect();
        let head = random_head(5, 4, &mut rng);
        let a = LogRegObjective::new(&x, &y, 5, ClassWeight::Balanced, 1.0).unwrap().evaluate(&head);
        let b = LogRegObjective::new(&x, &y, 5, ClassWeight::None, 1.0).unwrap().evaluate(&head);
        assert!((&a.1 - &b.1).amax() < 1e-12);
        assert!((&a.2 - &b.2).amax() < 1e-12);
    }

    #[test]
    fn balanced_weights_formula() {
        let w = sample_weights(&[0, 0, 0, 1], 5, ClassWeight::Balanced);
        assert_eq!(w, vec![4.0 / 6.0, 4.0 / 6.0, 4.0 / 6.0, 2.0]);
    }

    fn two_clusters(n: usize, d: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<usize>) {
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(n, d, |i, j| {
            let noise: f64 = StandardNormal.sample(rng);
            match j {
                0 => (if y[i] == 0 { -4.0 } else { 4.0 }) + 0.5 * noise,
                1 => (if y[i] == 0 { 3.0 } else { -3.0 }) + 0.5 * noise,
                _ => noise,
            }
        });
        (x, y)
    }

    #[test]
    fn separable_clusters_embedded_in_3072() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (x, y) = two_clusters(60, 3072, &mut rng);
        let fit = logreg_train(&x, &y, 5, &LogRegConfig::default()).unwrap();
        let correct = (0..60)
            .filter(|&i| fit.head.predict(&x.row(i).iter().copied().collect::<Vec<_>>()).unwrap() == y[i])
            .count();
        assert!(correct as f64 / 60.0 >= 0.99, "{correct}/60 after {} iters ({})", fit.iterations, fit.stop);
    }

    #[test]
    fn strong_regularization_shrinks_to_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, _) = two_clusters(40, 10, &mut rng);
        let y: Vec<usize> = (0..40).map(|i| if i < 30 { 0 } else { 1 }).collect();
        let cfg = LogRegConfig {
            c: 1e-6,
            class_weight: ClassWeight::None,
            tol: 1e-8,
            ..Default::default()
        };
        let fit = logreg_train(&x, &y, 2, &cfg).unwrap();
        assert!(fit.head.weights.norm() < 1e-2);
        let p = fit.head.predict_proba(&x.row(0).iter().copied().collect::<Vec<_>>()).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-2, "{p:?}");
    }

    #[test]
    fn errors() {
        let x = DMatrix::zeros(1, 3);
        assert!(logreg_train(&x, &[0], 2, &LogRegConfig::default()).is_err());
        let x = DMatrix::zeros(3, 3);
        assert!(logreg_train(&x, &[0, 1, 7], 2, &LogRegConfig::default()).is_err());
        let bad = LogRegConfig { c: 0.0, ..Default::default() };
        assert!(logreg_train(&x, &[0, 1, 1], 2, &bad).is_err());
    }
}
