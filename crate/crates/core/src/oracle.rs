//! Exact cumulative collision probabilities for chain-worlds.

use std::io::Write;

use crate::env::ChainWorldSpec;
use crate::error::{Error, Result};

/// Largest instance `brute_force_cumulative` will enumerate.
pub const BRUTE_MAX_STATES: usize = 6;
pub const BRUTE_MAX_HORIZON: usize = 8;

/// `P*[s][i]`: probability of a collision within `i` steps from state `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    values: Vec<Vec<f64>>,
}

impl OracleTable {
    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Largest horizon step in the table.
    pub fn n_heads(&self) -> usize {
        self.values.first().map_or(0, |row| row.len() - 1)
    }

    pub fn get(&self, state: usize, i: usize) -> f64 {
        self.values[state][i]
    }

    /// Heads `1..=n_heads` for one state, as a predictor would emit them.
    pub fn heads(&self, state: usize) -> &[f64] {
        &self.values[state][1..]
    }

    /// Delimited export: `state,horizon,probability` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state,horizon,probability")?;
        for (s, row) in self.values.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                writeln!(w, "{s},{i},{p}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Backward recursion `P[s][i] = h(s) + (1 - h(s)) * sum_s' T[s][s'] P[s'][i-1]`.
pub fn dp_cumulative(spec: &ChainWorldSpec, n_heads: usize) -> OracleTable {
    let n = spec.n_states;
    let mut values = vec![vec![0.0; n_heads + 1]; n];
    for i in 1..=n_heads {
        for s in 0..n {
            let carry: f64 = spec.transition[s].iter().zip(&values).map(|(p, row)| p * row[i - 1]).sum();
            values[s][i] = spec.hazard[s] + (1.0 - spec.hazard[s]) * carry;
        }
    }
    OracleTable { values }
}

/// Sums the probability of every state path that ends in a collision within
/// `i` steps from `start`, by explicit enumeration.
pub fn brute_force_cumulative(spec: &ChainWorldSpec, start: usize, i: usize) -> Result<f64> {
    let n = spec.n_states;
    if n > BRUTE_MAX_STATES || i > BRUTE_MAX_HORIZON {
        return Err(Error::InstanceTooLarge { states: n, horizon: i });
    }
    let mut total = 0.0;
    // collide on step k+1 after surviving k steps along (start, s1, ..., sk)
    for k in 0..i {
        let mut path = vec![0usize; k];
        loop {
            let mut prob = 1.0;
            let mut at = start;
            for &next in &path {
                prob *= (1.0 - spec.hazard[at]) * spec.transition[at][next];
                at = next;
            }
            total += prob * spec.hazard[at];

            // odometer increment over n^k paths
            let mut pos = 0;
            while pos < k {
                path[pos] += 1;
                if path[pos] < n {
                    break;
                }
                path[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
        }
    }
    Ok(total)
}

/// Largest `|dp - brute force|` over every state and horizon step.
pub fn cross_check(spec: &ChainWorldSpec, table: &OracleTable) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..spec.n_states {
        for i in 0..=table.n_heads() {
            let brute = brute_force_cumulative(spec, s, i)?;
            worst = worst.max((brute - table.get(s, i)).abs());
        }
    }
    Ok(worst)
}
