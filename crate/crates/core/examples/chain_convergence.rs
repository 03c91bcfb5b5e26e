//! Trains on the demo chain-world and prints the worst per-(state, head)
//! deviation from the exact table.

use std::time::Instant;

use cumrisk::env::{generate_episodes, ChainWorldSpec, EnvSpec};
use cumrisk::evaluation::oracle_errors;
use cumrisk::oracle::dp_cumulative;
use cumrisk::training::{train, TrainConfig};

fn main() -> cumrisk::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |k: usize, d: f64| args.get(k).and_then(|s| s.parse().ok()).unwrap_or(d);
    let spec = ChainWorldSpec::demo();
    let n_heads = 10;
    let (set, summary) = generate_episodes(&EnvSpec::Chain(spec.clone()), arg(1, 2000.0) as usize, 7)?;
    println!("{} episodes, {} collisions", summary.episodes, summary.collisions);

    let mut cfg = TrainConfig::small(spec.obs_dim(), n_heads, 11);
    cfg.epochs = arg(2, 20.0) as usize;
    cfg.samples_per_epoch = arg(3, 4000.0) as usize;
    cfg.lr_start = arg(4, 1e-3);
    cfg.lr_end = arg(5, 1e-4);
    cfg.batch_size = arg(6, 8.0) as usize;
    let start = Instant::now();
    let (est, log) = train(&set.episodes, &cfg)?;
    let last = log.last().expect("at least one epoch");
    println!("trained in {:.1?}; last loss {:.5}, mean E_pes {:?}", start.elapsed(), last.loss, last.mean_e_pes);

    let table = dp_cumulative(&spec, n_heads);
    let rows = oracle_errors(&set.episodes, &est, &table);
    let worst = rows.iter().max_by(|a, b| a.abs_error().total_cmp(&b.abs_error())).expect("rows");
    println!("max |p - P*| = {:.4} at state {} head {}", worst.abs_error(), worst.state, worst.head);
    Ok(())
}
