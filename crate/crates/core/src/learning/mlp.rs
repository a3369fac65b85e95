use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataShard, Example, LearningError};
use crate::model::{Layer, LayeredParams, Shape};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_per_round: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_layers: Vec<usize>,
    /// Mini-batch gradients with a larger global L2 norm are rescaled to it.
    pub grad_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 3,
            learning_rate: 0.05,
            batch_size: 16,
            hidden_layers: vec![32, 16],
            grad_clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearningError::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(LearningError::Config("batch_size must be >= 1".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(LearningError::Config(
                "hidden_layers needs at least one non-zero width".into(),
            ));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(LearningError::Config("grad_clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// Fully connected ReLU network with a softmax output.
///
/// Parameters are laid out as `[W1, b1, W2, b2, ..., Wout, bout]`, each
/// weight matrix `(fan_out, fan_in)` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        Self { widths }
    }

    /// Recovers the architecture from a parameter layout.
    pub fn from_params(params: &LayeredParams) -> Result<Self, LearningError> {
        let layers = params.layers();
        if !layers.len().is_multiple_of(2) {
            return Err(LearningError::Config(
                "expected alternating weight/bias layers".into(),
            ));
        }
        let mut widths = Vec::new();
        for pair in layers.chunks(2) {
            match (pair[0].shape(), pair[1].shape()) {
                (Shape::Matrix { rows, cols }, Shape::Vector { len }) if len == rows => {
                    if let Some(&prev) = widths.last() {
                        if prev != cols {
                            return Err(LearningError::Config(format!(
                                "layer input {cols} does not match previous width {prev}"
                            )));
                        }
                    } else {
                        widths.push(cols);
                    }
                    widths.push(rows);
                }
                other => {
                    return Err(LearningError::Config(format!(
                        "unexpected layer pair {other:?}"
                    )))
                }
            }
        }
        Ok(Self { widths })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(&self, seed: u64) -> LayeredParams {
        let mut rng = seed::rng(seed);
        let mut layers = Vec::new();
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            let weights = draw(fan_in * fan_out);
            let bias = draw(fan_out);
            layers.push(Layer::matrix(fan_out, fan_in, weights).unwrap());
            layers.push(Layer::vector(bias).unwrap());
        }
        LayeredParams::new(layers).unwrap()
    }

    /// Pre-activations of every layer for one input.
    fn forward(&self, params: &LayeredParams, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = params.layers();
        let depth = self.widths.len() - 1;
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = layers[2 * l].values();
            let b = layers[2 * l + 1].values();
            let input: &[f64] = if l == 0 { x } else { &zs[l - 1] };
            let relu = l > 0;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row
                        .iter()
                        .zip(input)
                        .map(|(wi, xi)| wi * if relu { xi.max(0.0) } else { *xi })
                        .sum::<f64>()
                })
                .collect();
            zs.push(z);
        }
        zs
    }

    pub fn logits(&self, params: &LayeredParams, x: &[f64]) -> Vec<f64> {
        self.forward(params, x).pop().unwrap()
    }

    pub fn predict(&self, params: &LayeredParams, x: &[f64]) -> usize {
        argmax(&self.logits(params, x))
    }

    /// Mean cross-entropy over `examples`.
    pub fn loss(&self, params: &LayeredParams, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        examples
            .iter()
            .map(|e| cross_entropy(&self.logits(params, &e.features), e.label))
            .sum::<f64>()
            / examples.len() as f64
    }

    /// Adds the gradient of the cross-entropy for one example into `grad`
    /// and returns the example's loss.
    fn accumulate_grad(&self, params: &LayeredParams, e: &Example, grad: &mut [Vec<f64>]) -> f64 {
        let zs = self.forward(params, &e.features);
        let depth = zs.len();
        let logits = &zs[depth - 1];
        let loss = cross_entropy(logits, e.label);
        let mut delta = softmax(logits);
        delta[e.label] -= 1.0;
        let layers = params.layers();
        for l in (0..depth).rev() {
            let fan_in = self.widths[l];
            let input: Vec<f64> = if l == 0 {
                e.features.clone()
            } else {
                zs[l - 1].iter().map(|z| z.max(0.0)).collect()
            };
            let (gw, rest) = grad[2 * l..].split_first_mut().unwrap();
            let gb = &mut rest[0];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(&input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let w = layers[2 * l].values();
                let mut prev = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&zs[l - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Runs `epochs_per_round` epochs of mini-batch SGD on the shard's training
/// split, starting from `start`.
pub fn local_train(
    start: &LayeredParams,
    shard: &DataShard,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LayeredParams, LearningError> {
    cfg.validate()?;
    let mlp = Mlp::from_params(start)?;
    if mlp.input_dim() != shard.feature_dim || mlp.output_dim() != shard.num_classes {
        return Err(LearningError::Config(format!(
            "model maps {} -> {} but task is {} -> {}",
            mlp.input_dim(),
            mlp.output_dim(),
            shard.feature_dim,
            shard.num_classes
        )));
    }
    let mut params = start.clone();
    if cfg.epochs_per_round == 0 || shard.train.is_empty() {
        return Ok(params);
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..shard.train.len()).collect();
    let mut grad: Vec<Vec<f64>> = params
        .layers()
        .iter()
        .map(|l| vec![0.0; l.values().len()])
        .collect();
    for epoch in 0..cfg.epochs_per_round {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| g.fill(0.0));
            for &i in batch {
                epoch_loss += mlp.accumulate_grad(&params, &shard.train[i], &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            let norm = grad
                .iter()
                .flatten()
                .map(|g| (g * scale).powi(2))
                .sum::<f64>()
                .sqrt();
            let clip = if norm > cfg.grad_clip_norm {
                cfg.grad_clip_norm / norm
            } else {
                1.0
            };
            let step = cfg.learning_rate * scale * clip;
            for (layer, g) in params.layers_mut().iter_mut().zip(&grad) {
                for (p, gi) in layer.values_mut().iter_mut().zip(g) {
                    *p -= step * gi;
                }
            }
        }
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(LearningError::Divergence { epoch });
        }
    }
    Ok(params)
}
