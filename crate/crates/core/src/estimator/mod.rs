//! Multi-head estimator: a shared fully connected backbone feeding one small
//! sub-network per horizon step. Head `i` sees the backbone latent plus the
//! raw output of head `i - 1` (head 1 gets a constant 0 in that slot), so the
//! heads form a chain in ascending horizon order.
//!
//! All parameters live in one flat vector. For every dense layer the weight
//! matrix comes first (row-major, `out x in`), then its bias. Backbone
//! layers come first in order, then each head's layers, head 1 first.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{optimizer_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{batch_loss_and_grad, loss_chain, loss_interval, loss_mse, BatchItem, LossBreakdown, LossWeights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that maps a feature vector to per-head cumulative estimates.
pub trait Predictor {
    fn n_heads(&self) -> usize;

    /// Raw head outputs, head 1 first.
    fn predict(&self, features: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub input_dim: usize,
    pub backbone_layers: Vec<usize>,
    /// Widths of each head's layers; the last must be 1.
    pub head_layers: Vec<usize>,
    pub n_heads: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl EstimatorConfig {
    /// Backbone [64, 64], heads [16, 1], ReLU.
    pub fn small(input_dim: usize, n_heads: usize, init_seed: u64) -> Self {
        EstimatorConfig {
            input_dim,
            backbone_layers: vec![64, 64],
            head_layers: vec![16, 1],
            n_heads,
            activation: Activation::Relu,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_heads == 0 {
            return Err(Error::config("input_dim and n_heads must be at least 1"));
        }
        if self.backbone_layers.is_empty() || self.backbone_layers.contains(&0) {
            return Err(Error::config("backbone_layers needs at least one layer, all widths >= 1"));
        }
        if self.head_layers.last() != Some(&1) || self.head_layers.contains(&0) {
            return Err(Error::config("head_layers must be nonempty, widths >= 1, ending in 1"));
        }
        Ok(())
    }

    fn latent_dim(&self) -> usize {
        *self.backbone_layers.last().expect("validated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Dense {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn end(&self) -> usize {
        self.offset + (self.inputs + 1) * self.outputs
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.weights()];
        let b = &params[self.bias()];
        out.clear();
        out.extend(w.chunks_exact(self.inputs).zip(b).map(|(row, bias)| dot(row, input) + bias));
    }

    /// Accumulates parameter gradients for `delta = dL/dz` and returns `dL/dinput`.
    fn backward(&self, params: &[f64], input: &[f64], delta: &[f64], grad: &mut [f64], d_input: &mut Vec<f64>) {
        let w = &params[self.weights()];
        d_input.clear();
        d_input.resize(self.inputs, 0.0);
        let (gw, gb) = grad[self.offset..self.end()].split_at_mut(self.inputs * self.outputs);
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for k in 0..self.inputs {
                grow[k] += d * input[k];
                d_input[k] += d * row[k];
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorLayout {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadEstimator {
    config: EstimatorConfig,
    backbone: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Input to each backbone layer, then the latent at the end.
    backbone_h: Vec<Vec<f64>>,
    backbone_z: Vec<Vec<f64>>,
    backbone_a: Vec<Vec<f64>>,
    /// Per head: input to each layer.
    head_in: Vec<Vec<Vec<f64>>>,
    head_z: Vec<Vec<Vec<f64>>>,
    head_a: Vec<Vec<Vec<f64>>>,
    pub outputs: Vec<f64>,
}

impl MultiHeadEstimator {
    /// All-zero parameters.
    pub fn zeros(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let mut offset = 0;
        let mut make = |inputs: usize, outputs: usize| {
            let d = Dense { inputs, outputs, offset };
            offset = d.end();
            d
        };
        let mut width = config.input_dim;
        let mut backbone = Vec::with_capacity(config.backbone_layers.len());
        for &w in &config.backbone_layers {
            backbone.push(make(width, w));
            width = w;
        }
        let head_input = config.latent_dim() + 1;
        let mut heads = Vec::with_capacity(config.n_heads);
        for _ in 0..config.n_heads {
            let mut width = head_input;
            let mut layers = Vec::with_capacity(config.head_layers.len());
            for &w in &config.head_layers {
                layers.push(make(width, w));
                width = w;
            }
            heads.push(layers);
        }
        let params = vec![0.0; offset];
        Ok(MultiHeadEstimator { config, backbone, heads, params })
    }

    /// Seeded uniform initialization in `±1/sqrt(fan_in)`.
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        let mut est = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(est.config.init_seed);
        let layers: Vec<Dense> = est.backbone.iter().chain(est.heads.iter().flatten()).copied().collect();
        for layer in layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in &mut est.params[layer.offset..layer.end()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(est)
    }

    pub fn from_params(config: EstimatorConfig, params: Vec<f64>) -> Result<Self> {
        let mut est = Self::zeros(config)?;
        if params.len() != est.params.len() {
            return Err(Error::Dimension { expected: est.params.len(), actual: params.len() });
        }
        est.params = params;
        Ok(est)
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offsets and shapes of every tensor in the flat parameter vector.
    pub fn layout(&self) -> Vec<TensorLayout> {
        let mut out = Vec::new();
        let mut push = |prefix: String, d: &Dense| {
            out.push(TensorLayout {
                name: format!("{prefix}.weight"),
                offset: d.offset,
                shape: vec![d.outputs, d.inputs],
            });
            out.push(TensorLayout { name: format!("{prefix}.bias"), offset: d.bias().start, shape: vec![d.outputs] });
        };
        for (k, d) in self.backbone.iter().enumerate() {
            push(format!("backbone.{k}"), d);
        }
        for (i, head) in self.heads.iter().enumerate() {
            for (k, d) in head.iter().enumerate() {
                push(format!("head{}.{k}", i + 1), d);
            }
        }
        out
    }

    /// Parameter range owned by head `i` (1-based).
    pub fn head_param_range(&self, i: usize) -> std::ops::Range<usize> {
        let layers = &self.heads[i - 1];
        layers[0].offset..layers[layers.len() - 1].end()
    }

    pub fn backbone_param_range(&self) -> std::ops::Range<usize> {
        0..self.backbone[self.backbone.len() - 1].end()
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.config.input_dim {
            return Err(Error::Dimension { expected: self.config.input_dim, actual: features.len() });
        }
        Ok(())
    }

    fn skip(&self, k: usize) -> bool {
        k > 0 && self.backbone[k].inputs == self.backbone[k].outputs
    }

    /// Shared latent representation.
    pub fn backbone_latent(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        let act = self.config.activation;
        let mut h = features.to_vec();
        let mut z = Vec::new();
        for (k, layer) in self.backbone.iter().enumerate() {
            layer.forward(&self.params, &h, &mut z);
            if self.skip(k) {
                h.iter_mut().zip(&z).for_each(|(h, &z)| *h += act.apply(z));
            } else {
                h = z.iter().map(|&z| act.apply(z)).collect();
            }
        }
        Ok(h)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let latent = self.backbone_latent(features)?;
        let act = self.config.activation;
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut input = latent;
        input.push(0.0);
        let slot = input.len() - 1;
        let mut h = Vec::new();
        let mut z = Vec::new();
        for head in &self.heads {
            h.clear();
            h.extend_from_slice(&input);
            for (k, layer) in head.iter().enumerate() {
                layer.forward(&self.params, &h, &mut z);
                h.clear();
                if k + 1 == head.len() {
                    h.extend_from_slice(&z);
                } else {
                    h.extend(z.iter().map(|&z| act.apply(z)));
                }
            }
            outputs.push(h[0]);
            input[slot] = h[0];
        }
        Ok(outputs)
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache> {
        self.check_dim(features)?;
        let act = self.config.activation;
        let mut cache = ForwardCache::default();

        let mut h = features.to_vec();
        for (k, layer) in self.backbone.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&self.params, &h, &mut z);
            let a: Vec<f64> = z.iter().map(|&z| act.apply(z)).collect();
            let next = if self.skip(k) { h.iter().zip(&a).map(|(h, a)| h + a).collect() } else { a.clone() };
            cache.backbone_h.push(std::mem::replace(&mut h, next));
            cache.backbone_z.push(z);
            cache.backbone_a.push(a);
        }
        cache.backbone_h.push(h.clone());

        let mut prev = 0.0;
        for head in &self.heads {
            let mut ins = Vec::with_capacity(head.len());
            let mut zs = Vec::with_capacity(head.len());
            let mut acts = Vec::with_capacity(head.len());
            let mut x = h.clone();
            x.push(prev);
            for (k, layer) in head.iter().enumerate() {
                let mut z = Vec::new();
                layer.forward(&self.params, &x, &mut z);
                let a: Vec<f64> = if k + 1 == head.len() { z.clone() } else { z.iter().map(|&z| act.apply(z)).collect() };
                ins.push(std::mem::replace(&mut x, a.clone()));
                zs.push(z);
                acts.push(a);
            }
            prev = x[0];
            cache.outputs.push(prev);
            cache.head_in.push(ins);
            cache.head_z.push(zs);
            cache.head_a.push(acts);
        }
        Ok(cache)
    }

    /// Backpropagates `d_outputs = dL/d(head outputs)` into `grad`, including
    /// the paths through each head's predecessor input.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let act = self.config.activation;
        let latent = self.config.latent_dim();
        let mut d_latent = vec![0.0; latent];
        let mut carry = 0.0;
        let mut delta = Vec::new();
        let mut d_in = Vec::new();

        for j in (0..self.heads.len()).rev() {
            let head = &self.heads[j];
            let mut d_h = vec![d_outputs[j] + carry];
            for k in (0..head.len()).rev() {
                delta.clear();
                if k + 1 == head.len() {
                    delta.extend_from_slice(&d_h);
                } else {
                    let z = &cache.head_z[j][k];
                    let a = &cache.head_a[j][k];
                    delta.extend(d_h.iter().zip(z.iter().zip(a)).map(|(d, (&z, &a))| d * act.derivative(z, a)));
                }
                head[k].backward(&self.params, &cache.head_in[j][k], &delta, grad, &mut d_in);
                std::mem::swap(&mut d_h, &mut d_in);
            }
            d_latent.iter_mut().zip(&d_h[..latent]).for_each(|(a, b)| *a += b);
            carry = d_h[latent];
        }

        let mut d_h = d_latent;
        for k in (0..self.backbone.len()).rev() {
            let z = &cache.backbone_z[k];
            let a = &cache.backbone_a[k];
            delta.clear();
            delta.extend(d_h.iter().zip(z.iter().zip(a)).map(|(d, (&z, &a))| d * act.derivative(z, a)));
            self.backbone[k].backward(&self.params, &cache.backbone_h[k], &delta, grad, &mut d_in);
            if self.skip(k) {
                d_in.iter_mut().zip(&d_h).for_each(|(a, b)| *a += b);
            }
            std::mem::swap(&mut d_h, &mut d_in);
        }
    }
}

impl Predictor for MultiHeadEstimator {
    fn n_heads(&self) -> usize {
        self.config.n_heads
    }

    /// # Panics
    /// On a feature vector of the wrong length.
    fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.forward(features).expect("feature dimension checked by caller")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_heads: usize, activation: Activation) -> EstimatorConfig {
        EstimatorConfig {
            input_dim: 4,
            backbone_layers: vec![6, 6],
            head_layers: vec![3, 1],
            n_heads,
            activation,
            init_seed: 7,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let est = MultiHeadEstimator::zeros(tiny(3, Activation::Relu)).unwrap();
        assert_eq!(est.forward(&[0.3, -1.0, 2.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = MultiHeadEstimator::new(tiny(3, Activation::Tanh)).unwrap();
        let b = MultiHeadEstimator::new(tiny(3, Activation::Tanh)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let mut cfg = tiny(3, Activation::Tanh);
        cfg.init_seed = 8;
        assert_ne!(a.params(), MultiHeadEstimator::new(cfg).unwrap().params());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let est = MultiHeadEstimator::new(tiny(2, Activation::Relu)).unwrap();
        assert!(matches!(est.forward(&[1.0]), Err(Error::Dimension { expected: 4, actual: 1 })));
    }

    #[test]
    fn cached_forward_matches_plain_forward() {
        let est = MultiHeadEstimator::new(tiny(4, Activation::Relu)).unwrap();
        let x = [0.9, -0.2, 0.4, 1.1];
        assert_eq!(est.forward_cached(&x).unwrap().outputs, est.forward(&x).unwrap());
    }

    #[test]
    fn perturbing_head_one_moves_every_head_but_not_the_backbone() {
        let mut est = MultiHeadEstimator::new(tiny(4, Activation::Tanh)).unwrap();
        let x = [0.5, 0.1, -0.7, 0.2];
        let before = est.forward(&x).unwrap();
        let latent = est.backbone_latent(&x).unwrap();
        let range = est.head_param_range(1);
        for p in &mut est.params_mut()[range] {
            *p += 0.05;
        }
        let after = est.forward(&x).unwrap();
        assert_eq!(est.backbone_latent(&x).unwrap(), latent);
        for (b, a) in before.iter().zip(&after) {
            assert_ne!(b, a);
        }
    }

    #[test]
    fn layout_covers_the_parameter_vector() {
        let est = MultiHeadEstimator::new(tiny(2, Activation::Relu)).unwrap();
        let layout = est.layout();
        let mut end = 0;
        for t in &layout {
            assert_eq!(t.offset, end, "{}", t.name);
            end += t.shape.iter().product::<usize>();
        }
        assert_eq!(end, est.param_count());
        assert_eq!(layout[0].name, "backbone.0.weight");
        assert_eq!(layout[0].shape, vec![6, 4]);
        assert_eq!(layout[2].shape, vec![6, 6]);
        // head input is latent + predecessor slot
        assert_eq!(layout.iter().find(|t| t.name == "head2.0.weight").unwrap().shape, vec![3, 7]);
    }
}
