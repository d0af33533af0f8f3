use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Affine map `y = weights * x + bias`, `weights` being `K x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl RidgeSolution {
    /// Predictions for every row of `x` (`N x D` in, `N x K` out).
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.weights.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn centered(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= means.transpose();
    }
    out
}

fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(a).ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    let sol = chol.solve(b);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ridge solve produced non-finite weights".into()));
    }
    Ok(sol)
}

/// L2-regularized least squares with an unpenalized intercept.
///
/// Minimizes `||Y - X W^T - 1 b^T||^2 + alpha ||W||^2` by centering both sides
/// and solving the regularized normal equations with a Cholesky factorization.
/// When there are fewer rows than features the equivalent `N x N` system
/// `(Xc Xc^T + alpha I) G = Yc`, `W^T = Xc^T G` is factorized instead.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<RidgeSolution> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::domain("ridge fit needs a non-empty design matrix"));
    }
    if y.nrows() != n {
        return Err(Error::dims("ridge targets rows", n, y.nrows()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::domain(format!("ridge alpha must be positive, got {alpha}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("ridge inputs contain non-finite values"));
    }

    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let xc = centered(x, &x_mean);
    let yc = centered(y, &y_mean);

    // `coef` is D x K.
    let coef = if n >= d {
        let mut gram = xc.tr_mul(&xc);
        for i in 0..d {
            gram[(i, i)] += alpha;
        }
        spd_solve(gram, &xc.tr_mul(&yc))?
    } else {
        let mut kernel = &xc * xc.transpose();
        for i in 0..n {
            kernel[(i, i)] += alpha;
        }
        let dual = spd_solve(kernel, &yc)?;
        xc.tr_mul(&dual)
    };

    let weights = coef.transpose();
    let bias = &y_mean - &weights * &x_mean;
    Ok(RidgeSolution { weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    /// Relative norm of `(Xc^T Xc + alpha I) W^T - Xc^T Yc`.
    fn normal_equation_residual(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64, sol: &RidgeSolution) -> f64 {
        let xc = centered(x, &column_means(x));
        let yc = centered(y, &column_means(y));
        let mut lhs = xc.tr_mul(&xc);
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += alpha;
        }
        let rhs = xc.tr_mul(&yc);
        (lhs * sol.weights.transpose() - &rhs).norm() / rhs.norm().max(1e-300)
    }

    #[test]
    fn exact_line_with_vanishing_penalty() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DMatrix::from_row_slice(3, 1, &[2.0, 4.0, 6.0]);
        let sol = ridge_fit(&x, &y, 1e-12).unwrap();
        assert!((sol.weights[(0, 0)] - 2.0).abs() < 1e-6);
        assert!(sol.bias[0].abs() < 1e-6);
    }

    #[test]
    fn hand_normal_equation() {
        // Scalar oracle: w = sum(xc*yc) / (sum(xc^2) + alpha), b = ybar - w*xbar.
        let xs = [1.0, 2.0, 3.0];
        let ys = [2.0, 4.0, 6.0];
        let (xbar, ybar) = (2.0, 4.0);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let w = sxy / (sxx + 3.0);
        assert_eq!(w, 0.8);
        let sol = ridge_fit(&DMatrix::from_row_slice(3, 1, &xs), &DMatrix::from_row_slice(3, 1, &ys), 3.0).unwrap();
        assert!((sol.weights[(0, 0)] - 0.8).abs() < 1e-12);
        assert!((sol.bias[0] - (ybar - w * xbar)).abs() < 1e-12);
        assert!((sol.bias[0] - 2.4).abs() < 1e-12);
    }

    #[test]
    fn recovers_known_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let (n, d) = (200, 16);
        let a = gaussian(d, d, &mut rng);
        let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let x = gaussian(n, d, &mut rng);
        let noise = gaussian(n, d, &mut rng) * 1e-3;
        let mut y = &x * a.transpose() + noise;
        for mut row in y.row_iter_mut() {
            row += b.transpose();
        }
        let train: Vec<usize> = (0..160).collect();
        let val: Vec<usize> = (160..200).collect();
        let sol = ridge_fit(&x.select_rows(&train), &y.select_rows(&train), 1e-6).unwrap();
        assert!((&sol.weights - &a).amax() < 1e-2);
        assert!((&sol.bias - &b).amax() < 1e-2);
        let pred = sol.predict_rows(&x.select_rows(&val));
        let m = crate::adapter::evaluate_regression(&y.select_rows(&val), &pred).unwrap();
        assert!(m.r2 > 0.99, "r2 = {}", m.r2);
    }

    #[test]
    fn residual_small_in_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (n, d) in [(40, 12), (12, 40)] {
            let x = gaussian(n, d, &mut rng);
            let y = gaussian(n, 5, &mut rng);
            let sol = ridge_fit(&x, &y, 0.7).unwrap();
            let r = normal_equation_residual(&x, &y, 0.7, &sol);
            assert!(r < 1e-8, "n={n} d={d} residual {r}");
        }
    }

    #[test]
    fn weight_norm_nonincreasing_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(30, 8, &mut rng);
        let y = gaussian(30, 3, &mut rng);
        let mut prev = f64::INFINITY;
        for alpha in [1e-4, 1e-2, 0.1, 1.0, 3.0, 10.0, 100.0, 1e4] {
            let norm = ridge_fit(&x, &y, alpha).unwrap().weights.norm();
            assert!(norm <= prev + 1e-12, "alpha {alpha}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(ridge_fit(&x, &y, 1.0), Err(Error::Domain(_))));
        assert!(ridge_fit(&x, &x, 0.0).is_err());
        assert!(ridge_fit(&x, &DMatrix::zeros(3, 1), 1.0).is_err());
    }
}
