use serde::{Deserialize, Serialize};

use super::MultiHeadEstimator;
use crate::error::{Error, Result};

/// First/second moment accumulators of the Adam update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { step: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }
}

/// One bias-corrected Adam step. On a non-finite gradient nothing changes.
pub fn optimizer_step(
    estimator: &mut MultiHeadEstimator,
    gradients: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let n = estimator.param_count();
    if gradients.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension { expected: n, actual: gradients.len() });
    }
    if let Some(k) = gradients.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k} is {}", gradients[k])));
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let params = estimator.params_mut();
    for k in 0..n {
        let g = gradients[k];
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[k] / correction1;
        let v_hat = state.v[k] / correction2;
        params[k] -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Activation, EstimatorConfig};

    fn est() -> MultiHeadEstimator {
        MultiHeadEstimator::new(EstimatorConfig {
            input_dim: 2,
            backbone_layers: vec![3],
            head_layers: vec![1],
            n_heads: 2,
            activation: Activation::Relu,
            init_seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut e = est();
        let before = e.params().to_vec();
        let mut state = AdamState::new(e.param_count());
        optimizer_step(&mut e, &vec![0.0; before.len()], &mut state, 0.1).unwrap();
        assert_eq!(e.params(), before.as_slice());
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        // m_hat = g, v_hat = g^2 after one step, so the move is lr * g / (|g| + eps)
        let mut e = est();
        let before = e.params().to_vec();
        let mut state = AdamState::new(e.param_count());
        let mut g = vec![0.0; before.len()];
        g[0] = 0.3;
        g[1] = -2.0;
        optimizer_step(&mut e, &g, &mut state, 0.01).unwrap();
        let d0 = e.params()[0] - before[0];
        let d1 = e.params()[1] - before[1];
        assert!((d0 + 0.01 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((d1 - 0.01 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_moves_monotonically_downhill() {
        let mut e = est();
        let mut state = AdamState::new(e.param_count());
        let g = vec![0.5; e.param_count()];
        let p0 = e.params().to_vec();
        optimizer_step(&mut e, &g, &mut state, 0.01).unwrap();
        let p1 = e.params().to_vec();
        optimizer_step(&mut e, &g, &mut state, 0.01).unwrap();
        let p2 = e.params().to_vec();
        for k in 0..p0.len() {
            assert!(p1[k] < p0[k] && p2[k] < p1[k]);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut e = est();
        let before = e.params().to_vec();
        let mut state = AdamState::new(e.param_count());
        let mut g = vec![0.1; before.len()];
        g[2] = f64::NAN;
        assert!(matches!(optimizer_step(&mut e, &g, &mut state, 0.01), Err(Error::NonFinite(_))));
        assert_eq!(e.params(), before.as_slice());
        assert_eq!(state.step, 0);
    }
}
