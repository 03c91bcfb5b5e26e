//! With exact bootstraps, the expected λ-return target of every head equals
//! the true cumulative probability, for any λ and truncation.

mod common;

use common::{random_chain, reference_table};
use cumrisk::credit::{step_targets, HorizonConfig, RewardTrace, Terminal};
use cumrisk::env::ChainWorldSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Walks every path of up to `depth` steps from `state`, calling `visit`
/// with the path probability, the trace and the heads at each later state.
fn enumerate(
    spec: &ChainWorldSpec,
    table: &[Vec<f64>],
    n_heads: usize,
    depth: usize,
    path: &mut Vec<usize>,
    prob: f64,
    visit: &mut dyn FnMut(f64, RewardTrace, Vec<Vec<f64>>),
) {
    let here = *path.last().expect("path starts at a state");
    let steps = path.len() - 1;
    let heads = |s: usize| table[s][1..=n_heads].to_vec();
    let future = |p: &[usize]| p[1..].iter().map(|&s| heads(s)).collect::<Vec<_>>();
    if steps == depth {
        // one spare reward so every window up to `depth` sees its end state
        let trace = RewardTrace::new(vec![0.0; depth + 1], Terminal::TimeLimit).unwrap();
        visit(prob, trace, future(path));
        return;
    }
    let h = spec.hazard[here];
    if h > 0.0 {
        let mut rewards = vec![0.0; steps + 1];
        rewards[steps] = 1.0;
        let trace = RewardTrace::new(rewards, Terminal::Collision).unwrap();
        visit(prob * h, trace, future(path));
    }
    for next in 0..spec.n_states {
        let p = spec.transition[here][next];
        if p > 0.0 {
            path.push(next);
            enumerate(spec, table, n_heads, depth, path, prob * (1.0 - h) * p, visit);
            path.pop();
        }
    }
}

#[test]
fn expected_target_is_the_true_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n_heads = 7;
    for round in 0..3 {
        let spec = random_chain(&mut rng, 3, 0.3);
        let table = reference_table(&spec, n_heads);
        for &lambda in &[0.0, 0.5, 0.8, 1.0] {
            for &trunc_n in &[1, 3, n_heads] {
                let cfg = HorizonConfig::new(1.0, n_heads, lambda, trunc_n).unwrap();
                let depth = trunc_n;
                for s in 0..spec.n_states {
                    let mut expected = vec![0.0; n_heads];
                    let mut mass = 0.0;
                    enumerate(&spec, &table, n_heads, depth, &mut vec![s], 1.0, &mut |p, trace, future| {
                        mass += p;
                        for (k, y) in step_targets(&trace, 0, &cfg, &future).into_iter().enumerate() {
                            expected[k] += p * y.expect("every window is known");
                        }
                    });
                    assert!((mass - 1.0).abs() < 1e-12);
                    for i in 1..=n_heads {
                        let err = (expected[i - 1] - table[s][i]).abs();
                        assert!(err < 1e-10, "round {round} λ={lambda} trunc={trunc_n} s={s} i={i}: {err}");
                    }
                }
            }
        }
    }
}
