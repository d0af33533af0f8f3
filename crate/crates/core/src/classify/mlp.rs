use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::head::{Activation, DenseLayer, MlpHead};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_LAYERS: usize = 6;
pub const DEFAULT_HIDDEN_WIDTH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub lr: f64,
    /// Decoupled (AdamW) decay, applied to weight matrices only.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::with_width_factor(1.0)
    }
}

impl MlpConfig {
    /// Six hidden layers of `1024 * width_factor` units (at least one).
    pub fn with_width_factor(width_factor: f64) -> Self {
        let width = ((DEFAULT_HIDDEN_WIDTH as f64 * width_factor).round() as usize).max(1);
        Self {
            hidden: vec![width; DEFAULT_HIDDEN_LAYERS],
            dropout_p: 0.1,
            lr: 0.000186,
            weight_decay: 0.1,
            epochs: 80,
            batch_size: 32,
            grad_clip: Some(0.3),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::domain(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::domain(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::domain("hidden layer widths must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::domain(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

impl MlpHead {
    /// Seeded initialization: He-uniform for ReLU layers, Glorot-uniform for
    /// the output layer, zero biases.
    pub fn init(input_dim: usize, hidden: &[usize], n_classes: usize, dropout_p: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(input_dim, hidden, n_classes, dropout_p, &mut rng)
    }

    fn init_with(input_dim: usize, hidden: &[usize], n_classes: usize, dropout_p: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::domain("MLP input dimension is zero"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (i, &out) in hidden.iter().chain(std::iter::once(&n_classes)).enumerate() {
            let last = i == hidden.len();
            let bound = if last {
                (6.0 / (fan_in + out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            layers.push(DenseLayer {
                weights: DMatrix::from_fn(out, fan_in, |_, _| rng.random_range(-bound..bound)),
                bias: DVector::zeros(out),
                activation: if last { Activation::Identity } else { Activation::Relu },
            });
            fan_in = out;
        }
        MlpHead::new(layers, dropout_p)
    }
}

/// Gradients for each layer, aligned with [`MlpHead::layers`].
pub type LayerGrads = Vec<(DMatrix<f64>, DVector<f64>)>;

fn check_batch(head: &MlpHead, x: &DMatrix<f64>, y: &[usize]) -> Result<()> {
    use super::head::ClassifierHead;
    if x.ncols() != head.input_dim() {
        return Err(Error::dims("MLP input", head.input_dim(), x.ncols()));
    }
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::dims("MLP labels", x.nrows(), y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= head.n_classes()) {
        return Err(Error::domain(format!("label {bad} outside 0..{}", head.n_classes())));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradient. With `rng` set,
/// inverted dropout masks are drawn after each hidden activation.
fn forward_backward(head: &MlpHead, x: &DMatrix<f64>, y: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> (f64, LayerGrads) {
    let n = x.nrows();
    let keep = 1.0 - head.dropout_p;
    // inputs[l] feeds layer l; masks[l] is the dropout mask after layer l.
    let mut inputs: Vec<DMatrix<f64>> = Vec::with_capacity(head.layers.len());
    let mut masks: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(head.layers.len());
    let mut a = x.clone();
    for layer in &head.layers {
        let mut z = &a * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        let mut mask = None;
        if layer.activation == Activation::Relu {
            z.apply(|v| *v = v.max(0.0));
            if let Some(r) = rng.as_deref_mut() {
                if head.dropout_p > 0.0 {
                    let m = DMatrix::from_fn(z.nrows(), z.ncols(), |_, _| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    z.component_mul_assign(&m);
                    mask = Some(m);
                }
            }
        }
        inputs.push(std::mem::replace(&mut a, z));
        masks.push(mask);
    }

    // `a` now holds logits; turn it into dL/dlogits.
    let mut loss = 0.0;
    for (i, mut row) in a.row_iter_mut().enumerate() {
        let max = row.max();
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y[i]];
        row.apply(|z| *z = (*z - lse).exp() / n as f64);
        row[y[i]] -= 1.0 / n as f64;
    }
    loss /= n as f64;

    let mut grads = Vec::with_capacity(head.layers.len());
    let mut delta = a;
    for l in (0..head.layers.len()).rev() {
        let layer = &head.layers[l];
        let input = &inputs[l];
        let gw = delta.tr_mul(input);
        let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
        if l > 0 {
            let mut next = &delta * &layer.weights;
            // `input` is the (masked) post-ReLU output of layer l-1.
            if let Some(m) = &masks[l - 1] {
                next.component_mul_assign(m);
            }
            next.zip_apply(input, |d, a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = next;
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    (loss, grads)
}

/// Mean cross-entropy of `head` on `(x, y)` with dropout disabled, and its
/// gradient with respect to every layer's weights and bias.
pub fn mlp_loss_and_grad(head: &MlpHead, x: &DMatrix<f64>, y: &[usize]) -> Result<(f64, LayerGrads)> {
    check_batch(head, x, y)?;
    Ok(forward_backward(head, x, y, None))
}

/// Mean cross-entropy with dropout disabled.
pub fn mlp_loss(head: &MlpHead, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    check_batch(head, x, y)?;
    let mut a = x.clone();
    for layer in &head.layers {
        let mut z = &a * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        if layer.activation == Activation::Relu {
            z.apply(|v| *v = v.max(0.0));
        }
        a = z;
    }
    let mut loss = 0.0;
    for (i, row) in a.row_iter().enumerate() {
        let max = row.max();
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y[i]];
    }
    Ok(loss / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpFit {
    pub head: MlpHead,
    /// Lowest validation loss checkpoint (earliest on ties), when a validation
    /// set was supplied and at least one epoch ran.
    pub best: Option<(usize, MlpHead)>,
    pub history: Vec<EpochStats>,
}

struct AdamW {
    m: LayerGrads,
    v: LayerGrads,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl AdamW {
    fn new(head: &MlpHead) -> Self {
        let zeros: LayerGrads = head
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, head: &mut MlpHead, grads: &LayerGrads, lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: f64| {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] *= 1.0 - lr * decay;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        };
        for (l, layer) in head.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update(layer.weights.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice(), wd);
            update(layer.bias.as_mut_slice(), gb.as_slice(), mb.as_mut_slice(), vb.as_mut_slice(), 0.0);
        }
    }
}

fn clip_global_norm(grads: &mut LayerGrads, max_norm: f64) {
    let norm = grads
        .iter()
        .map(|(w, b)| w.norm_squared() + b.norm_squared())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (w, b) in grads.iter_mut() {
            *w *= s;
            *b *= s;
        }
    }
}

/// Mini-batch AdamW training from a seeded initialization. The same seed
/// drives initialization, per-epoch shuffles and dropout masks.
pub fn mlp_train(
    x: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    config: &MlpConfig,
    validation: Option<(&DMatrix<f64>, &[usize])>,
) -> Result<MlpFit> {
    config.validate()?;
    let n = x.nrows();
    if n < config.batch_size {
        return Err(Error::domain(format!(
            "{n} training samples is fewer than batch size {}",
            config.batch_size
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("MLP features contain non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = MlpHead::init_with(x.ncols(), &config.hidden, n_classes, config.dropout_p, &mut rng)?;
    check_batch(&head, x, y)?;
    if let Some((vx, vy)) = validation {
        check_batch(&head, vx, vy)?;
    }

    let mut opt = AdamW::new(&head);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, MlpHead, f64)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = x.select_rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, mut grads) = forward_backward(&head, &bx, &by, Some(&mut rng));
            total += loss * batch.len() as f64;
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            opt.step(&mut head, &grads, config.lr, config.weight_decay);
        }
        if head.layers.iter().any(|l| l.weights.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("MLP weights diverged in epoch {epoch}")));
        }
        let val_loss = match validation {
            Some((vx, vy)) => Some(mlp_loss(&head, vx, vy)?),
            None => None,
        };
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|b| vl < b.2) {
                best = Some((epoch, head.clone(), vl));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss: total / n as f64,
            val_loss,
        });
    }
    Ok(MlpFit {
        head,
        best: best.map(|(e, h, _)| (e, h)),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::head::ClassifierHead;
    use rand_distr::{Distribution, StandardNormal};

    fn small_config(hidden: Vec<usize>) -> MlpConfig {
        MlpConfig {
            hidden,
            dropout_p: 0.0,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 16,
            grad_clip: None,
            seed: 7,
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(20, 6, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let cfg = MlpConfig {
            epochs: 0,
            ..small_config(vec![4, 4])
        };
        let fit = mlp_train(&x, &y, 3, &cfg, Some((&x, &y))).unwrap();
        assert_eq!(fit.head, MlpHead::init(6, &[4, 4], 3, 0.0, 7).unwrap());
        assert!(fit.best.is_none());
    }

    #[test]
    fn xor_clusters_need_the_hidden_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = [(-1.0, -1.0, 0), (1.0, 1.0, 0), (-1.0, 1.0, 1), (1.0, -1.0, 1)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let (cx, cy, label) = centers[i % 4];
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            rows.extend([cx + 0.15 * nx, cy + 0.15 * ny]);
            y.push(label);
        }
        let x = DMatrix::from_row_slice(200, 2, &rows);
        let fit = mlp_train(&x, &y, 2, &small_config(vec![32]), None).unwrap();
        let correct = (0..200)
            .filter(|&i| fit.head.predict(&[x[(i, 0)], x[(i, 1)]]).unwrap() == y[i])
            .count();
        assert!(correct >= 190, "{correct}/200");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(7, 8, |_, _| StandardNormal.sample(&mut rng));
        let y = [0, 1, 2, 2, 1, 0, 1];
        // Dropout probability set but never applied by the gradient helper.
        let mut head = MlpHead::init(8, &[5], 3, 0.4, 2).unwrap();
        for l in head.layers.iter_mut() {
            l.bias.apply(|b| *b = rng.random_range(-0.5..0.5));
        }
        let (_, grads) = mlp_loss_and_grad(&head, &x, &y).unwrap();
        let h = 1e-6;
        for l in 0..head.layers.len() {
            let (gw, gb) = &grads[l];
            let n_w = head.layers[l].weights.len();
            for p in 0..n_w + gb.len() {
                let bump = |e: f64| {
                    let mut c = head.clone();
                    if p < n_w {
                        c.layers[l].weights.as_mut_slice()[p] += e;
                    } else {
                        c.layers[l].bias[p - n_w] += e;
                    }
                    mlp_loss(&c, &x, &y).unwrap()
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = if p < n_w { gw.as_slice()[p] } else { gb[p - n_w] };
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-4, "layer {l} param {p}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn inference_ignores_dropout_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 5, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let cfg = MlpConfig {
            dropout_p: 0.5,
            epochs: 3,
            ..small_config(vec![8])
        };
        let head = mlp_train(&x, &y, 2, &cfg, None).unwrap().head;
        let v = [0.1, 0.2, -0.3, 0.4, 0.0];
        let _ = ChaCha8Rng::seed_from_u64(999).random::<u64>();
        assert_eq!(head.predict_proba(&v).unwrap(), head.predict_proba(&v).unwrap());
        assert_eq!(head.logits(&v).unwrap(), head.logits(&v).unwrap());
    }

    #[test]
    fn deterministic_and_tracks_best_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(48, 4, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..48).map(|i| usize::from(x[(i, 0)] > 0.0)).collect();
        let cfg = MlpConfig {
            epochs: 15,
            dropout_p: 0.2,
            grad_clip: Some(0.5),
            weight_decay: 0.01,
            ..small_config(vec![6, 6])
        };
        let a = mlp_train(&x, &y, 2, &cfg, Some((&x, &y))).unwrap();
        let b = mlp_train(&x, &y, 2, &cfg, Some((&x, &y))).unwrap();
        assert_eq!(a.head, b.head);
        assert_eq!(a.history, b.history);
        let (epoch, best) = a.best.unwrap();
        let best_loss = a.history[epoch].val_loss.unwrap();
        assert!(a.history.iter().all(|h| h.val_loss.unwrap() >= best_loss));
        assert_eq!(mlp_loss(&best, &x, &y).unwrap(), best_loss);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g: LayerGrads = vec![(DMatrix::from_element(2, 2, 3.0), DVector::from_element(2, 4.0))];
        clip_global_norm(&mut g, 1.0);
        let norm = (g[0].0.norm_squared() + g[0].1.norm_squared()).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let x = DMatrix::zeros(4, 2);
        let y = [0, 1, 0, 1];
        for cfg in [
            MlpConfig { lr: 0.0, ..small_config(vec![2]) },
            MlpConfig { batch_size: 0, ..small_config(vec![2]) },
            MlpConfig { batch_size: 5, ..small_config(vec![2]) },
            MlpConfig { dropout_p: 1.0, ..small_config(vec![2]) },
        ] {
            assert!(mlp_train(&x, &y, 2, &cfg, None).is_err());
        }
    }

    #[test]
    fn default_architecture() {
        let cfg = MlpConfig::default();
        assert_eq!(cfg.hidden, vec![1024; 6]);
        assert_eq!(MlpConfig::with_width_factor(1.0 / 16.0).hidden, vec![64; 6]);
        assert_eq!(cfg.dropout_p, 0.1);
    }
}
