use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("softmax input has non-finite logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps a feature vector to class probabilities. Fusion
/// classifiers beyond the built-in heads (e.g. a boosted-tree model) plug in
/// through this trait.
pub trait ClassifierHead {
    fn input_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Inference-mode forward pass; dropout never applies here.
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// `softmax(W x + b)` with `W` of shape `K x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxHead {
    pub(crate) weights: DMatrix<f64>,
    pub(crate) bias: DVector<f64>,
}

impl LinearSoftmaxHead {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dims("linear head bias", weights.nrows(), bias.len()));
        }
        if weights.nrows() < 2 || weights.ncols() == 0 {
            return Err(Error::domain(format!("linear head shape {:?} needs K >= 2, d >= 1", weights.shape())));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(n_classes: usize, dim: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n_classes, dim), DVector::zeros(n_classes))
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.ncols() {
            return Err(Error::dims("linear head input", self.weights.ncols(), x.len()));
        }
        let z = &self.weights * DVector::from_column_slice(x) + &self.bias;
        Ok(z.data.into())
    }
}

impl ClassifierHead for LinearSoftmaxHead {
    fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => Err(Error::domain(format!("unknown activation tag {other}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::domain(format!("unknown activation {other:?}"))),
        }
    }
}

/// Fully connected layer, `weights` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// Stack of dense layers ending in an identity layer that feeds softmax.
/// `dropout_p` applies after hidden activations during training only.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub(crate) layers: Vec<DenseLayer>,
    pub(crate) dropout_p: f64,
}

impl MlpHead {
    pub fn new(layers: Vec<DenseLayer>, dropout_p: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("MLP needs at least one layer"));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::domain(format!("dropout {dropout_p} outside [0, 1)")));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.nrows() != layer.bias.len() || layer.weights.is_empty() {
                return Err(Error::domain(format!("layer {i} has inconsistent shape")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weights.ncols() != layer.weights.nrows() {
                    return Err(Error::dims("MLP layer chain", layer.weights.nrows(), next.weights.ncols()));
                }
            }
        }
        let last = layers.last().unwrap();
        if last.activation != Activation::Identity {
            return Err(Error::domain("final MLP layer must be identity"));
        }
        if last.weights.nrows() < 2 {
            return Err(Error::domain("MLP output needs at least 2 classes"));
        }
        Ok(Self { layers, dropout_p })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("MLP input", self.input_dim(), x.len()));
        }
        let mut a = DVector::from_column_slice(x);
        for layer in &self.layers {
            a = &layer.weights * a + &layer.bias;
            if layer.activation == Activation::Relu {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(a.data.into())
    }
}

impl ClassifierHead for MlpHead {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform_and_stable() {
        assert_eq!(softmax(&[0.0; 5]).unwrap(), vec![0.2; 5]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
            let c = rng.random_range(-100.0..100.0);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let (a, b) = (softmax(&z).unwrap(), softmax(&shifted).unwrap());
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_ties_low_and_scale_invariant() {
        assert_eq!(argmax(&[0.2; 5]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lambda = rng.random_range(1e-3..1e3);
            let scaled: Vec<f64> = z.iter().map(|v| v * lambda).collect();
            assert_eq!(argmax(&z), argmax(&scaled));
        }
    }

    #[test]
    fn zero_linear_head_is_uniform() {
        let h = LinearSoftmaxHead::zeros(5, 7).unwrap();
        assert_eq!(h.predict_proba(&[3.0; 7]).unwrap(), vec![0.2; 5]);
        assert_eq!(h.predict(&[3.0; 7]).unwrap(), 0);
        assert!(h.predict_proba(&[1.0; 6]).is_err());
        assert!(LinearSoftmaxHead::zeros(1, 3).is_err());
    }

    #[test]
    fn dead_relu_yields_final_bias() {
        let hidden = DenseLayer {
            weights: DMatrix::from_element(4, 3, 1.0),
            bias: DVector::from_element(4, -100.0),
            activation: Activation::Relu,
        };
        let out_bias = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let out = DenseLayer {
            weights: DMatrix::from_element(3, 4, 7.0),
            bias: out_bias.clone(),
            activation: Activation::Identity,
        };
        let mlp = MlpHead::new(vec![hidden, out], 0.3).unwrap();
        let p = mlp.predict_proba(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, softmax(out_bias.as_slice()).unwrap());
    }

    /// Plain nested-loop forward pass.
    fn loop_forward(layers: &[DenseLayer], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in layers {
            let mut z = vec![0.0; l.weights.nrows()];
            for (i, zi) in z.iter_mut().enumerate() {
                let mut acc = l.bias[i];
                for (j, aj) in a.iter().enumerate() {
                    acc += l.weights[(i, j)] * aj;
                }
                *zi = if l.activation == Activation::Relu { acc.max(0.0) } else { acc };
            }
            a = z;
        }
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn random_heads_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rand_layer = |o: usize, i: usize, act| DenseLayer {
            weights: DMatrix::from_fn(o, i, |_, _| rng.random_range(-1.0..1.0)),
            bias: DVector::from_fn(o, |_, _| rng.random_range(-1.0..1.0)),
            activation: act,
        };
        let layers = vec![
            rand_layer(6, 5, Activation::Relu),
            rand_layer(4, 6, Activation::Relu),
            rand_layer(3, 4, Activation::Identity),
        ];
        let lin = rand_layer(3, 5, Activation::Identity);
        let mlp = MlpHead::new(layers.clone(), 0.0).unwrap();
        let linear = LinearSoftmaxHead::new(lin.weights.clone(), lin.bias.clone()).unwrap();
        let x = [0.3, -1.2, 2.0, 0.0, 0.7];
        for (got, want) in [
            (mlp.predict_proba(&x).unwrap(), loop_forward(&layers, &x)),
            (linear.predict_proba(&x).unwrap(), loop_forward(&[lin], &x)),
        ] {
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mlp_shape_validation() {
        let l = |o, i, a| DenseLayer {
            weights: DMatrix::zeros(o, i),
            bias: DVector::zeros(o),
            activation: a,
        };
        assert!(MlpHead::new(vec![l(4, 3, Activation::Relu), l(2, 5, Activation::Identity)], 0.0).is_err());
        assert!(MlpHead::new(vec![l(4, 3, Activation::Relu), l(2, 4, Activation::Relu)], 0.0).is_err());
        assert!(MlpHead::new(vec![l(2, 3, Activation::Identity)], 1.0).is_err());
        assert!(MlpHead::new(vec![l(2, 3, Activation::Identity)], 0.5).is_ok());
    }
}
