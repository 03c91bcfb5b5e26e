//! Learning targets for the cumulative collision estimators.
//!
//! Horizon steps are 1-based throughout: head `i` estimates the probability
//! of a collision within the next `i` steps, `p(t -> t+i)`. A trace holds the
//! rewards `r(t+1)` for every recorded observation `s(t)`, with `1` marking a
//! collision. (A reward of `-1` with negated estimates is the equivalent
//! RL-maximization convention; internally collisions are `+1` so heads read
//! directly as probabilities.)

use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::estimator::Predictor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Seconds per step.
    pub delta_t: f64,
    pub n_heads: usize,
    pub lambda: f64,
    /// Deepest n-step return mixed into a target.
    pub trunc_n: usize,
}

impl HorizonConfig {
    pub fn new(delta_t: f64, n_heads: usize, lambda: f64, trunc_n: usize) -> Result<Self> {
        let cfg = HorizonConfig { delta_t, n_heads, lambda, trunc_n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::config(format!("delta_t must be positive, got {}", self.delta_t)));
        }
        if self.n_heads == 0 {
            return Err(Error::config("n_heads must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.trunc_n == 0 || self.trunc_n > self.n_heads {
            return Err(Error::config(format!(
                "trunc_n must lie in [1, n_heads={}], got {}",
                self.n_heads, self.trunc_n
            )));
        }
        Ok(())
    }

    /// Time horizon covered by the last head, in seconds.
    pub fn horizon_seconds(&self) -> f64 {
        self.n_heads as f64 * self.delta_t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Collision,
    TimeLimit,
    Blocked,
}

impl Terminal {
    pub fn as_str(&self) -> &'static str {
        match self {
            Terminal::Collision => "collision",
            Terminal::TimeLimit => "time_limit",
            Terminal::Blocked => "blocked",
        }
    }
}

impl std::str::FromStr for Terminal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collision" => Ok(Terminal::Collision),
            "time_limit" => Ok(Terminal::TimeLimit),
            "blocked" => Ok(Terminal::Blocked),
            other => Err(Error::config(format!("unknown done reason {other:?}"))),
        }
    }
}

impl std::fmt::Display for Terminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collision indicators `r(1..=T)` of one episode.
///
/// `censor` is the first step index whose state could not have been observed
/// whatever happened (the time limit). Windows reaching it are masked for
/// every episode, colliding or not, so that masking never depends on the
/// outcome it hides.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTrace {
    rewards: Vec<f64>,
    terminal: Terminal,
    censor: Option<usize>,
}

/// What is known about the window `(t, t+n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Window {
    Collided,
    /// No collision, and the state `s(t+n)` is recorded.
    Open,
}

impl RewardTrace {
    pub fn new(rewards: Vec<f64>, terminal: Terminal) -> Result<Self> {
        if rewards.iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(Error::config("rewards must be 0 or 1"));
        }
        let hits = rewards.iter().filter(|&&r| r == 1.0).count();
        match terminal {
            Terminal::Collision => {
                if hits != 1 || rewards.last() != Some(&1.0) {
                    return Err(Error::config(
                        "a collision trace carries exactly one collision, at its last step",
                    ));
                }
            }
            _ => {
                if hits != 0 {
                    return Err(Error::config("only collision traces may contain a collision reward"));
                }
            }
        }
        Ok(RewardTrace { rewards, terminal, censor: None })
    }

    /// Sets the censoring step (see type docs).
    pub fn with_censor(mut self, censor: usize) -> Self {
        self.censor = Some(censor);
        self
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    pub fn censor(&self) -> Option<usize> {
        self.censor
    }

    /// Number of recorded steps; equals the number of observations.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Step at which the collision reward arrives (`T`, with `r(T) = 1`).
    pub fn collision_step(&self) -> Option<usize> {
        match self.terminal {
            Terminal::Collision => Some(self.rewards.len()),
            _ => None,
        }
    }

    fn window(&self, t: usize, n: usize) -> Result<Window> {
        let end = t + n;
        let invalid = Error::InvalidTarget { t, depth: n };
        if t >= self.len() || self.censor.is_some_and(|c| end >= c) {
            return Err(invalid);
        }
        match self.collision_step() {
            Some(step) if step <= end => Ok(Window::Collided),
            _ if end < self.len() => Ok(Window::Open),
            _ => Err(invalid),
        }
    }

    /// Whether the depth-`n` window starting at `t` has a known outcome.
    pub fn is_valid(&self, t: usize, n: usize) -> bool {
        self.window(t, n).is_ok()
    }
}

/// Fixed-finite return: 1 if the collision lies in steps `t+1..=t+i`.
pub fn mc_return(trace: &RewardTrace, t: usize, i: usize) -> Result<f64> {
    assert!(i >= 1, "horizon step must be at least 1");
    match trace.window(t, i)? {
        Window::Collided => Ok(1.0),
        Window::Open => Ok(0.0),
    }
}

/// Mixing weights over depths `1..=min(i, trunc_n)`.
///
/// Depth `n` below the last gets `(1-λ)λ^(n-1)`, the last depth `m` takes
/// the geometric remainder `λ^(m-1)`, so the weights always sum to one.
pub fn lambda_weights(i: usize, lambda: f64, trunc_n: usize) -> Vec<f64> {
    assert!(i >= 1 && trunc_n >= 1, "horizon step and truncation must be at least 1");
    assert!((0.0..=1.0).contains(&lambda), "lambda must lie in [0, 1]");
    let m = i.min(trunc_n);
    let mut weights: Vec<f64> = (1..m).map(|n| (1.0 - lambda) * lambda.powi(n as i32 - 1)).collect();
    weights.push(lambda.powi(m as i32 - 1));
    weights
}

/// n-step return for head `i`: rewards over `t+1..=t+n` plus the clamped
/// bootstrap `p(t+n -> t+i)`, which is ignored when `n == i`.
pub fn n_step_return(trace: &RewardTrace, t: usize, n: usize, i: usize, bootstrap: f64) -> Result<f64> {
    assert!(1 <= n && n <= i, "depth must lie in [1, i]");
    match trace.window(t, n)? {
        Window::Collided => Ok(1.0),
        Window::Open if n == i => Ok(0.0),
        Window::Open => Ok(clamp_probability(bootstrap)),
    }
}

/// λ-return for head `i`. `bootstraps[n - 1]` holds `p(t+n -> t+i)`, the
/// estimate of head `i - n` at state `s(t+n)`.
pub fn lambda_return(
    trace: &RewardTrace,
    t: usize,
    i: usize,
    bootstraps: &[f64],
    cfg: &HorizonConfig,
) -> Result<f64> {
    let weights = lambda_weights(i, cfg.lambda, cfg.trunc_n);
    let m = weights.len();
    let needed = if m < i { m } else { m - 1 };
    assert!(bootstraps.len() >= needed, "need {needed} bootstrap estimates, got {}", bootstraps.len());

    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        // a depth with no weight must not make the target unknown
        if *w == 0.0 {
            continue;
        }
        let n = k + 1;
        let bootstrap = if n < i { bootstraps[k] } else { 0.0 };
        let g = n_step_return(trace, t, n, i, bootstrap)?;
        acc += w * g;
    }
    Ok(clamp_probability(acc))
}

pub(crate) fn clamp_probability(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// λ-return targets for every head at step `t`.
///
/// `future[n - 1]` holds the raw head outputs at `s(t+n)`; it may stop early
/// where the episode does. Entries whose windows are unknown come back `None`.
pub fn step_targets(trace: &RewardTrace, t: usize, cfg: &HorizonConfig, future: &[Vec<f64>]) -> Vec<Option<f64>> {
    let mut targets = Vec::with_capacity(cfg.n_heads);
    let mut bootstraps = Vec::with_capacity(cfg.trunc_n);
    for i in 1..=cfg.n_heads {
        let m = i.min(cfg.trunc_n);
        bootstraps.clear();
        for n in 1..=m.min(i - 1) {
            // p(t+n -> t+i) is head (i - n) at s(t+n)
            let value = future.get(n - 1).map_or(f64::NAN, |out| out[i - n - 1]);
            bootstraps.push(value);
        }
        targets.push(lambda_return(trace, t, i, &bootstraps, cfg).ok());
    }
    targets
}

/// Per-step, per-head targets with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMatrix {
    n_heads: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl TargetMatrix {
    pub fn n_steps(&self) -> usize {
        self.values.len() / self.n_heads.max(1)
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// Target for step `t` and 1-based head `i`, if valid.
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        let k = t * self.n_heads + (i - 1);
        self.valid[k].then_some(self.values[k])
    }

    pub fn row(&self, t: usize) -> Vec<Option<f64>> {
        (1..=self.n_heads).map(|i| self.get(t, i)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Targets for a whole episode, bootstrapping from a snapshot of `predictor`.
/// The bootstrap values are plain numbers here; nothing differentiates them.
pub fn build_targets<P: Predictor + ?Sized>(episode: &Episode, predictor: &P, cfg: &HorizonConfig) -> TargetMatrix {
    let outputs: Vec<Vec<f64>> = (0..episode.len()).map(|t| predictor.predict(episode.observation(t))).collect();
    let trace = episode.trace();
    let lookahead = cfg.trunc_n.min(cfg.n_heads.saturating_sub(1));

    let mut values = Vec::with_capacity(episode.len() * cfg.n_heads);
    let mut valid = Vec::with_capacity(values.capacity());
    for t in 0..episode.len() {
        let end = (t + 1 + lookahead).min(outputs.len());
        let future = &outputs[(t + 1).min(end)..end];
        for target in step_targets(trace, t, cfg, future) {
            values.push(target.unwrap_or(0.0));
            valid.push(target.is_some());
        }
    }
    TargetMatrix { n_heads: cfg.n_heads, values, valid }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rewards: &[f64], terminal: Terminal) -> RewardTrace {
        RewardTrace::new(rewards.to_vec(), terminal).unwrap()
    }

    fn cfg(n_heads: usize, lambda: f64, trunc_n: usize) -> HorizonConfig {
        HorizonConfig::new(0.1, n_heads, lambda, trunc_n).unwrap()
    }

    #[test]
    fn mc_return_examples() {
        let hit = trace(&[0.0, 0.0, 1.0], Terminal::Collision);
        assert_eq!(mc_return(&hit, 0, 5).unwrap(), 1.0);
        assert_eq!(mc_return(&hit, 0, 2).unwrap(), 0.0);
        assert_eq!(mc_return(&hit, 0, 3).unwrap(), 1.0);

        let timeout = trace(&[0.0; 20], Terminal::TimeLimit);
        assert!(matches!(mc_return(&timeout, 0, 20), Err(Error::InvalidTarget { .. })));
        assert_eq!(mc_return(&timeout, 0, 19).unwrap(), 0.0);
    }

    #[test]
    fn censor_masks_collision_windows_past_the_limit() {
        let hit = trace(&[0.0, 0.0, 1.0], Terminal::Collision).with_censor(4);
        assert_eq!(mc_return(&hit, 0, 3).unwrap(), 1.0);
        assert!(mc_return(&hit, 0, 4).is_err());
        assert!(mc_return(&hit, 2, 2).is_err());
    }

    #[test]
    fn trace_invariants() {
        assert!(RewardTrace::new(vec![0.0, 1.0, 0.0], Terminal::Collision).is_err());
        assert!(RewardTrace::new(vec![0.0, 1.0], Terminal::TimeLimit).is_err());
        assert!(RewardTrace::new(vec![0.0, 0.0], Terminal::Collision).is_err());
        assert!(RewardTrace::new(vec![0.5], Terminal::Blocked).is_err());
        assert!(RewardTrace::new(vec![0.0, 1.0], Terminal::Collision).is_ok());
    }

    #[test]
    fn lambda_weight_examples() {
        let w = lambda_weights(3, 0.8, 10);
        let expected = [0.2, 0.16, 0.64];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{w:?}");
        }
        assert_eq!(lambda_weights(1, 0.37, 4), vec![1.0]);
        assert_eq!(lambda_weights(5, 0.0, 10), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        // truncation puts the remainder on the deepest bootstrapped depth
        assert_eq!(lambda_weights(20, 0.5, 2), vec![0.5, 0.5]);
    }

    #[test]
    fn lambda_weights_match_brute_geometric_series() {
        // Brute force: the untruncated TD(λ) weights (1-λ)λ^(n-1) over n >= 1,
        // with all mass beyond depth m collapsed onto m.
        for &lambda in &[0.0, 0.3, 0.8, 1.0] {
            for i in 1..=30 {
                for trunc in [1, 5, i] {
                    let m = i.min(trunc);
                    let mut brute = vec![0.0; m];
                    let mut tail = 1.0;
                    for n in 1..m {
                        let w = (1.0 - lambda) * (0..n - 1).fold(1.0, |acc, _| acc * lambda);
                        brute[n - 1] = w;
                        tail -= w;
                    }
                    brute[m - 1] = tail;
                    let w = lambda_weights(i, lambda, trunc);
                    for (a, b) in w.iter().zip(&brute) {
                        assert!((a - b).abs() < 1e-12, "i={i} λ={lambda} trunc={trunc}");
                    }
                }
            }
        }
    }

    #[test]
    fn n_step_examples() {
        let zeros = trace(&[0.0; 6], Terminal::TimeLimit);
        assert_eq!(n_step_return(&zeros, 0, 2, 5, 0.3).unwrap(), 0.3);
        let immediate = trace(&[1.0], Terminal::Collision);
        assert_eq!(n_step_return(&immediate, 0, 1, 4, 0.42).unwrap(), 1.0);
        let three = trace(&[0.0, 0.0, 0.0, 0.0], Terminal::TimeLimit);
        assert_eq!(n_step_return(&three, 0, 3, 3, 0.9).unwrap(), 0.0);
        assert_eq!(n_step_return(&three, 0, 3, 3, 0.9).unwrap(), mc_return(&three, 0, 3).unwrap());
    }

    #[test]
    fn bootstrap_is_clamped() {
        let zeros = trace(&[0.0; 6], Terminal::TimeLimit);
        assert_eq!(n_step_return(&zeros, 0, 1, 3, 1.7).unwrap(), 1.0);
        assert_eq!(n_step_return(&zeros, 0, 1, 3, -0.2).unwrap(), 0.0);
    }

    #[test]
    fn n_step_past_end_is_invalid() {
        let zeros = trace(&[0.0; 3], Terminal::Blocked);
        assert!(n_step_return(&zeros, 1, 2, 4, 0.1).is_err());
        assert!(n_step_return(&zeros, 1, 1, 4, 0.1).is_ok());
    }

    #[test]
    fn lambda_return_examples() {
        let immediate = trace(&[1.0], Terminal::Collision);
        assert_eq!(lambda_return(&immediate, 0, 1, &[], &cfg(4, 0.8, 4)).unwrap(), 1.0);

        // two depths: 0.2 * (0 + 0.5) + 0.8 * 0
        let zeros = trace(&[0.0, 0.0, 0.0], Terminal::TimeLimit);
        let g = lambda_return(&zeros, 0, 2, &[0.5], &cfg(4, 0.8, 4)).unwrap();
        assert!((g - 0.1).abs() < 1e-15, "{g}");
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let hit = trace(&[0.0, 0.0, 0.0, 1.0], Terminal::Collision);
        let c = cfg(6, 1.0, 6);
        for i in 1..=6 {
            let g = lambda_return(&hit, 0, i, &[0.3; 6], &c).unwrap();
            assert_eq!(g, mc_return(&hit, 0, i).unwrap());
        }
    }

    #[test]
    fn lambda_zero_needs_only_the_first_step() {
        // deeper windows run past the recording but carry no weight
        let zeros = trace(&[0.0; 3], Terminal::TimeLimit);
        let g = lambda_return(&zeros, 1, 4, &[0.35, 0.0, 0.0], &cfg(4, 0.0, 4)).unwrap();
        assert_eq!(g, 0.35);
    }

    #[test]
    fn step_targets_mask_tail_of_truncated_episode() {
        let zeros = trace(&[0.0; 4], Terminal::TimeLimit);
        let c = cfg(3, 0.8, 3);
        let future = vec![vec![0.1, 0.2, 0.3]; 3];
        let row = step_targets(&zeros, 2, &c, &future[..1]);
        // s(3) is recorded, s(4) and beyond are not
        assert!(row[0].is_some());
        assert!(row[1].is_none());
        assert!(row[2].is_none());
    }
}
