#![allow(dead_code)]

use cumrisk::env::ChainWorldSpec;
use cumrisk::estimator::Predictor;

/// `P(s, i)` by the recursion over the first step, memoized per horizon.
pub fn reference_table(spec: &ChainWorldSpec, max_i: usize) -> Vec<Vec<f64>> {
    let n = spec.n_states;
    let mut table = vec![vec![0.0; max_i + 1]; n];
    for i in 1..=max_i {
        for s in 0..n {
            let survive_then: f64 = (0..n).map(|next| spec.transition[s][next] * table[next][i - 1]).sum();
            table[s][i] = spec.hazard[s] + (1.0 - spec.hazard[s]) * survive_then;
        }
    }
    table
}

/// Reads the newest one-hot frame and answers with the reference values.
pub struct TablePredictor {
    pub table: Vec<Vec<f64>>,
    pub n_heads: usize,
}

impl TablePredictor {
    pub fn new(spec: &ChainWorldSpec, n_heads: usize) -> Self {
        TablePredictor { table: reference_table(spec, n_heads), n_heads }
    }

    pub fn state_of(&self, obs: &[f64]) -> usize {
        let n = self.table.len();
        obs[..n].iter().position(|&v| v == 1.0).expect("one-hot frame")
    }
}

impl Predictor for TablePredictor {
    fn n_heads(&self) -> usize {
        self.n_heads
    }

    fn predict(&self, obs: &[f64]) -> Vec<f64> {
        self.table[self.state_of(obs)][1..=self.n_heads].to_vec()
    }
}

/// Random row-stochastic chain with hazards below `max_hazard`.
pub fn random_chain(rng: &mut impl rand::Rng, n: usize, max_hazard: f64) -> ChainWorldSpec {
    let row = |rng: &mut dyn rand::RngCore| {
        let raw: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(rng, 0.0..1.0) + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        // put the rounding residue on the last entry so rows sum to 1 exactly enough
        let head: f64 = p[..n - 1].iter().sum();
        p[n - 1] = 1.0 - head;
        p
    };
    let hazard = (0..n).map(|_| rng.gen_range(0.0..max_hazard)).collect();
    let transition = (0..n).map(|_| row(rng)).collect();
    let start = row(rng);
    ChainWorldSpec::new(hazard, transition, start).expect("valid random chain")
}
