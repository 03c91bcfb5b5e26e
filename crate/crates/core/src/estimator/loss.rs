use serde::{Deserialize, Serialize};

use super::MultiHeadEstimator;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the interval penalty.
    pub c_i: f64,
    /// Weight of the ordering (chain) penalty.
    pub c_c: f64,
    /// Acceptance probability of collision-related samples.
    pub p_c: f64,
    /// Acceptance probability of all other samples.
    pub p_nc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { c_i: 1.0, c_c: 1.0, p_c: 0.25, p_nc: 0.025 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_i >= 0.0 && self.c_c >= 0.0) {
            return Err(Error::config("c_i and c_c must be nonnegative"));
        }
        let unit = |p: f64| p > 0.0 && p <= 1.0;
        if !unit(self.p_c) || !unit(self.p_nc) {
            return Err(Error::config("p_c and p_nc must lie in (0, 1]"));
        }
        if self.p_nc > self.p_c {
            return Err(Error::config(format!("p_nc ({}) must not exceed p_c ({})", self.p_nc, self.p_c)));
        }
        Ok(())
    }

    /// Factor on the squared error of collision-related samples.
    pub fn collision_factor(&self) -> f64 {
        self.p_nc / self.p_c
    }
}

pub fn loss_mse(prediction: f64, target: f64, is_collision_sample: bool, w: &LossWeights) -> f64 {
    let e = target - prediction;
    let factor = if is_collision_sample { w.collision_factor() } else { 1.0 };
    factor * e * e
}

/// Linear penalty on the distance from `[0, 1]`.
pub fn loss_interval(prediction: f64, c_i: f64) -> f64 {
    c_i * (-prediction).max(prediction - 1.0).max(0.0)
}

fn interval_slope(prediction: f64, c_i: f64) -> f64 {
    if prediction > 1.0 {
        c_i
    } else if prediction < 0.0 {
        -c_i
    } else {
        0.0
    }
}

/// Ordering penalty for 1-based `head`: its estimate should not fall below
/// the predecessor's nor exceed the successor's.
pub fn loss_chain(predictions: &[f64], head: usize, c_c: f64) -> f64 {
    let k = head - 1;
    let mut loss = 0.0;
    if k > 0 {
        loss += (predictions[k - 1] - predictions[k]).max(0.0);
    }
    if k + 1 < predictions.len() {
        loss += (predictions[k] - predictions[k + 1]).max(0.0);
    }
    c_c * loss
}

/// One training sample: head targets (`None` = masked) for one observation.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub features: &'a [f64],
    pub targets: &'a [Option<f64>],
    pub collision: bool,
}

/// Mean loss over valid (sample, head) entries, split by term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub interval: f64,
    pub chain: f64,
    pub entries: usize,
}

/// Composite loss and its gradient with respect to every parameter.
///
/// Targets are constants here; only the predictions are differentiated.
pub fn batch_loss_and_grad(
    estimator: &MultiHeadEstimator,
    batch: &[BatchItem<'_>],
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n_heads = estimator.config().n_heads;
    let entries: usize = batch.iter().map(|b| b.targets.iter().filter(|t| t.is_some()).count()).sum();
    if entries == 0 {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / entries as f64;
    let mut grad = vec![0.0; estimator.param_count()];
    let mut sums = LossBreakdown { entries, ..Default::default() };
    let mut d_out = vec![0.0; n_heads];

    for item in batch {
        if item.targets.len() != n_heads {
            return Err(Error::Dimension { expected: n_heads, actual: item.targets.len() });
        }
        if item.targets.iter().all(Option::is_none) {
            continue;
        }
        let cache = estimator.forward_cached(item.features)?;
        let p = &cache.outputs;
        d_out.iter_mut().for_each(|d| *d = 0.0);
        let factor = if item.collision { w.collision_factor() } else { 1.0 };

        for (k, target) in item.targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            sums.mse += loss_mse(p[k], y, item.collision, w);
            sums.interval += loss_interval(p[k], w.c_i);
            sums.chain += loss_chain(p, k + 1, w.c_c);

            d_out[k] += -2.0 * factor * (y - p[k]);
            d_out[k] += interval_slope(p[k], w.c_i);
            if k > 0 && p[k - 1] > p[k] {
                d_out[k - 1] += w.c_c;
                d_out[k] -= w.c_c;
            }
            if k + 1 < n_heads && p[k] > p[k + 1] {
                d_out[k] += w.c_c;
                d_out[k + 1] -= w.c_c;
            }
        }
        d_out.iter_mut().for_each(|d| *d *= scale);
        estimator.backward(&cache, &d_out, &mut grad);
    }

    sums.mse *= scale;
    sums.interval *= scale;
    sums.chain *= scale;
    sums.total = sums.mse + sums.interval + sums.chain;
    Ok((sums, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Activation, EstimatorConfig};

    #[test]
    fn mse_examples() {
        let w = LossWeights::default();
        assert!((loss_mse(0.7, 1.0, false, &w) - 0.09).abs() < 1e-15);
        assert_eq!(loss_mse(0.42, 0.42, true, &w), 0.0);
        assert!((loss_mse(0.0, 1.0, true, &w) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn interval_examples() {
        assert!((loss_interval(1.2, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(loss_interval(0.5, 1.0), 0.0);
        assert!((loss_interval(-0.3, 2.0) - 0.6).abs() < 1e-15);
        assert_eq!(loss_interval(0.0, 1.0), 0.0);
        assert_eq!(loss_interval(1.0, 1.0), 0.0);
    }

    #[test]
    fn chain_examples() {
        assert!((loss_chain(&[0.4, 0.3], 1, 1.0) - 0.1).abs() < 1e-15);
        assert!((loss_chain(&[0.4, 0.3], 2, 1.0) - 0.1).abs() < 1e-15);
        assert!((loss_chain(&[0.5, 0.2, 0.6], 2, 1.0) - 0.3).abs() < 1e-15);
        for h in 1..=4 {
            assert_eq!(loss_chain(&[0.1, 0.2, 0.2, 0.9], h, 1.0), 0.0);
        }
        assert_eq!(loss_chain(&[0.7], 1, 1.0), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { p_nc: 0.5, p_c: 0.25, ..Default::default() }.validate().is_err());
        assert!(LossWeights { p_c: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { c_i: -1.0, ..Default::default() }.validate().is_err());
    }

    fn small_estimator() -> MultiHeadEstimator {
        MultiHeadEstimator::new(EstimatorConfig {
            input_dim: 3,
            backbone_layers: vec![5],
            head_layers: vec![4, 1],
            n_heads: 3,
            activation: Activation::Tanh,
            init_seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn all_masked_batch_is_an_error() {
        let est = small_estimator();
        let targets = [None, None, None];
        let batch = [BatchItem { features: &[0.1, 0.2, 0.3], targets: &targets, collision: false }];
        assert!(matches!(batch_loss_and_grad(&est, &batch, &LossWeights::default()), Err(Error::EmptyBatch)));
    }

    #[test]
    fn perfect_predictions_give_zero_loss_and_gradient() {
        // zero network: outputs 0 everywhere, inside the interval and ordered
        let est = MultiHeadEstimator::zeros(small_estimator().config().clone()).unwrap();
        let x = [0.3, -0.1, 0.8];
        let targets = [Some(0.0), Some(0.0), Some(0.0)];
        let batch = [BatchItem { features: &x, targets: &targets, collision: false }];
        let (loss, grad) = batch_loss_and_grad(&est, &batch, &LossWeights::default()).unwrap();
        assert_eq!(loss.total, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn chain_weight_scales_only_the_chain_term() {
        let est = small_estimator();
        let x = [0.3, -0.1, 0.8];
        let targets = [Some(0.2), Some(0.1), None];
        let batch = [BatchItem { features: &x, targets: &targets, collision: true }];
        let base = LossWeights { c_c: 0.7, ..Default::default() };
        let doubled = LossWeights { c_c: 1.4, ..base };
        let (a, _) = batch_loss_and_grad(&est, &batch, &base).unwrap();
        let (b, _) = batch_loss_and_grad(&est, &batch, &doubled).unwrap();
        assert_eq!(b.chain, 2.0 * a.chain);
        assert_eq!(b.mse, a.mse);
    }
}
