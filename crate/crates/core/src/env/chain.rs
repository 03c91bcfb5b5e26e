use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment, FrameStack};
use crate::credit::Terminal;
use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-12;

fn default_max_steps() -> usize {
    100
}

fn default_frame_stack() -> usize {
    3
}

/// Markov chain under a fixed policy with a per-state collision hazard.
///
/// `hazard[s]` is the chance of colliding during the step taken from `s`,
/// drawn before the transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainWorldSpec {
    pub n_states: usize,
    pub hazard: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub start_distribution: Vec<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_frame_stack")]
    pub frame_stack: usize,
}

impl ChainWorldSpec {
    pub fn new(hazard: Vec<f64>, transition: Vec<Vec<f64>>, start_distribution: Vec<f64>) -> Result<Self> {
        let spec = ChainWorldSpec {
            n_states: hazard.len(),
            hazard,
            transition,
            start_distribution,
            max_steps: default_max_steps(),
            frame_stack: default_frame_stack(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        if n == 0 {
            return Err(Error::config("chain needs at least one state"));
        }
        if self.hazard.len() != n || self.transition.len() != n || self.start_distribution.len() != n {
            return Err(Error::config(format!("hazard, transition and start_distribution must all have {n} entries")));
        }
        if let Some(s) = self.hazard.iter().position(|h| !(0.0..1.0).contains(h)) {
            return Err(Error::config(format!("hazard[{s}] = {} is outside [0, 1)", self.hazard[s])));
        }
        for (s, row) in self.transition.iter().enumerate() {
            check_distribution(row, n).map_err(|e| Error::config(format!("transition row {s}: {e}")))?;
        }
        check_distribution(&self.start_distribution, n).map_err(|e| Error::config(format!("start_distribution: {e}")))?;
        if self.max_steps == 0 || self.frame_stack == 0 {
            return Err(Error::config("max_steps and frame_stack must be at least 1"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.n_states * self.frame_stack
    }

    /// Five states with hazards between 1% and 8%, a lazy forward drift with
    /// occasional resets to the start. Used by the examples and tests.
    pub fn demo() -> Self {
        let hazard = vec![0.01, 0.02, 0.04, 0.06, 0.08];
        let transition = vec![
            vec![0.50, 0.40, 0.05, 0.05, 0.00],
            vec![0.10, 0.40, 0.40, 0.05, 0.05],
            vec![0.10, 0.05, 0.40, 0.40, 0.05],
            vec![0.20, 0.05, 0.05, 0.40, 0.30],
            vec![0.40, 0.05, 0.05, 0.10, 0.40],
        ];
        let start = vec![0.2; 5];
        ChainWorldSpec { max_steps: 60, ..ChainWorldSpec::new(hazard, transition, start).expect("valid demo chain") }
    }
}

fn check_distribution(p: &[f64], n: usize) -> std::result::Result<(), String> {
    if p.len() != n {
        return Err(format!("expected {n} entries, got {}", p.len()));
    }
    if p.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err("negative or NaN probability".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

fn sample_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the final partial sum; take the last nonzero entry
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

pub struct ChainWorld {
    spec: ChainWorldSpec,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    done: bool,
    frames: FrameStack,
}

impl ChainWorld {
    pub fn new(spec: ChainWorldSpec) -> Result<Self> {
        spec.validate()?;
        let frames = FrameStack::new(spec.n_states, spec.frame_stack);
        Ok(ChainWorld { rng: ChaCha8Rng::seed_from_u64(0), state: 0, steps: 0, done: true, frames, spec })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut frame = vec![0.0; self.spec.n_states];
        frame[self.state] = 1.0;
        frame
    }
}

/// State index encoded in the newest frame of a chain-world observation.
pub fn decode_state(observation: &[f64], n_states: usize) -> Option<usize> {
    observation.get(..n_states)?.iter().position(|&v| v == 1.0)
}

impl Environment for ChainWorld {
    fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    fn reset(&mut self, seed: u64) -> EnvStep {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = sample_index(&self.spec.start_distribution, &mut self.rng);
        self.steps = 0;
        self.done = false;
        let frame = self.one_hot();
        self.frames.reset(&frame);
        EnvStep::running(self.frames.observation())
    }

    fn step(&mut self) -> Result<EnvStep> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        self.steps += 1;
        let u: f64 = self.rng.gen();
        if u < self.spec.hazard[self.state] {
            self.done = true;
            return Ok(EnvStep::finished(self.frames.observation(), Terminal::Collision));
        }
        self.state = sample_index(&self.spec.transition[self.state], &mut self.rng);
        let frame = self.one_hot();
        self.frames.push(&frame);
        if self.steps >= self.spec.max_steps {
            self.done = true;
            return Ok(EnvStep::finished(self.frames.observation(), Terminal::TimeLimit));
        }
        Ok(EnvStep::running(self.frames.observation()))
    }
}
