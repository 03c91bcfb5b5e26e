//! Epoch loop: stratified sampling, fresh λ-return targets per batch, Adam.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credit::{step_targets, HorizonConfig};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::estimator::{
    batch_loss_and_grad, optimizer_step, AdamState, BatchItem, Checkpoint, EstimatorConfig, LossWeights,
    MultiHeadEstimator,
};
use crate::evaluation::evaluate;
use crate::replay::{build_index, sample, ReplayIndex};

fn default_batch_size() -> usize {
    8
}

fn default_eval_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub horizon: HorizonConfig,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub loss: LossWeights,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Share of episodes held out from training, by episode.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    pub master_seed: u64,
}

impl TrainConfig {
    /// Small default network, λ = 0.8, truncation at 10 (or `n_heads`).
    pub fn small(input_dim: usize, n_heads: usize, seed: u64) -> Self {
        TrainConfig {
            horizon: HorizonConfig { delta_t: 1.0, n_heads, lambda: 0.8, trunc_n: n_heads.min(10) },
            estimator: EstimatorConfig::small(input_dim, n_heads, seed),
            loss: LossWeights::default(),
            epochs: 10,
            samples_per_epoch: 2000,
            batch_size: default_batch_size(),
            lr_start: 1e-3,
            lr_end: 1e-4,
            eval_fraction: default_eval_fraction(),
            master_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        self.estimator.validate()?;
        self.loss.validate()?;
        if self.horizon.n_heads != self.estimator.n_heads {
            return Err(Error::config(format!(
                "horizon.n_heads ({}) differs from estimator.n_heads ({})",
                self.horizon.n_heads, self.estimator.n_heads
            )));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::config("learning rates need lr_start >= lr_end > 0"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config("eval_fraction must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::config("batch_size and samples_per_epoch must be at least 1"));
        }
        Ok(())
    }
}

/// Exponential decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_start;
    }
    let frac = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over batches of each loss term.
    pub loss: f64,
    pub mse: f64,
    pub interval: f64,
    pub chain: f64,
    /// Held-out accuracy error per head.
    pub e_acc: Vec<Option<f64>>,
    pub mean_e_pes: Option<f64>,
}

pub fn write_metrics_csv<W: Write>(log: &[EpochMetrics], n_heads: usize, mut w: W) -> Result<()> {
    let heads: Vec<String> = (1..=n_heads).map(|i| format!("e_acc_{i}")).collect();
    writeln!(w, "epoch,lr,loss,mse,interval,chain,{},mean_e_pes", heads.join(","))?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for m in log {
        let acc: Vec<String> = m.e_acc.iter().map(|&v| cell(v)).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.lr,
            m.loss,
            m.mse,
            m.interval,
            m.chain,
            acc.join(","),
            cell(m.mean_e_pes)
        )?;
    }
    Ok(())
}

/// Episode-level split; held-out ids come back sorted.
fn split(episodes: &[Episode], fraction: f64, seed: u64) -> Vec<u64> {
    let mut ids: Vec<u64> = episodes.iter().map(|e| e.id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut out = ids[..held].to_vec();
    out.sort_unstable();
    out
}

/// Owns the parameters for a training run.
pub struct Trainer<'a> {
    config: TrainConfig,
    estimator: MultiHeadEstimator,
    optimizer: AdamState,
    epoch: usize,
    heldout_ids: Vec<u64>,
    train_set: Vec<&'a Episode>,
    heldout: Vec<Episode>,
    index: ReplayIndex,
}

impl<'a> Trainer<'a> {
    pub fn new(episodes: &'a [Episode], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_corpus(episodes, &config)?;
        let heldout_ids = split(episodes, config.eval_fraction, config.master_seed);
        let estimator = MultiHeadEstimator::new(config.estimator.clone())?;
        let optimizer = AdamState::new(estimator.param_count());
        Self::assemble(episodes, config, estimator, optimizer, 0, heldout_ids)
    }

    /// Continues from a checkpoint; `epochs` may be raised to extend the run.
    pub fn resume(episodes: &'a [Episode], checkpoint: Checkpoint, epochs: Option<usize>) -> Result<Self> {
        let mut config = checkpoint.config.clone();
        if let Some(e) = epochs {
            config.epochs = e;
        }
        config.validate()?;
        check_corpus(episodes, &config)?;
        let estimator = checkpoint.estimator()?;
        Self::assemble(episodes, config, estimator, checkpoint.optimizer, checkpoint.epoch, checkpoint.heldout_ids)
    }

    fn assemble(
        episodes: &'a [Episode],
        config: TrainConfig,
        estimator: MultiHeadEstimator,
        optimizer: AdamState,
        epoch: usize,
        heldout_ids: Vec<u64>,
    ) -> Result<Self> {
        let (heldout, train_set): (Vec<&Episode>, Vec<&Episode>) =
            episodes.iter().partition(|e| heldout_ids.binary_search(&e.id).is_ok());
        if train_set.is_empty() {
            return Err(Error::DegenerateCorpus("no training episodes after the held-out split".into()));
        }
        let index = build_index(train_set.iter().copied(), config.horizon.n_heads)?;
        log::info!(
            "training on {} episodes ({} collision-related steps), {} held out",
            train_set.len(),
            index.collision_related_count(),
            heldout.len()
        );
        Ok(Trainer {
            heldout: heldout.into_iter().cloned().collect(),
            config,
            estimator,
            optimizer,
            epoch,
            heldout_ids,
            train_set,
            index,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn estimator(&self) -> &MultiHeadEstimator {
        &self.estimator
    }

    pub fn into_estimator(self) -> MultiHeadEstimator {
        self.estimator
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn heldout_ids(&self) -> &[u64] {
        &self.heldout_ids
    }

    pub fn heldout(&self) -> &[Episode] {
        &self.heldout
    }

    pub fn checkpoint(&self, spec_hash: &str) -> Checkpoint {
        Checkpoint::new(
            self.config.clone(),
            &self.estimator,
            self.optimizer.clone(),
            self.epoch,
            spec_hash.to_string(),
            self.heldout_ids.clone(),
        )
    }

    /// One epoch; the sampling stream depends only on the seed and the epoch
    /// number, so a resumed run draws what an uninterrupted one would.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let cfg = &self.config;
        let epoch = self.epoch;
        let lr = lr_schedule(epoch, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
        rng.set_stream(epoch as u64 + 1);

        let mut remaining = cfg.samples_per_epoch;
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        while remaining > 0 {
            let size = remaining.min(cfg.batch_size);
            remaining -= size;
            let drawn = sample(&self.index, size, &mut rng, cfg.loss.p_c, cfg.loss.p_nc)?;
            let est = &self.estimator;
            // bootstraps come from a read-only snapshot of the current parameters
            let targets: Vec<Vec<Option<f64>>> = drawn
                .samples
                .par_iter()
                .map(|d| {
                    let ep = self.train_set[d.sample.episode];
                    let t = d.sample.t;
                    let lookahead = cfg.horizon.trunc_n.min(cfg.horizon.n_heads - 1);
                    let end = (t + 1 + lookahead).min(ep.len());
                    let future: Vec<Vec<f64>> =
                        (t + 1..end).map(|s| est.forward(ep.observation(s))).collect::<Result<_>>()?;
                    Ok(step_targets(ep.trace(), t, &cfg.horizon, &future))
                })
                .collect::<Result<_>>()?;
            let batch: Vec<BatchItem> = drawn
                .samples
                .iter()
                .zip(&targets)
                .map(|(d, y)| BatchItem {
                    features: self.train_set[d.sample.episode].observation(d.sample.t),
                    targets: y,
                    collision: d.collision_related,
                })
                .collect();
            let (loss, grad) = match batch_loss_and_grad(est, &batch, &cfg.loss) {
                Err(Error::EmptyBatch) => {
                    log::debug!("epoch {epoch}: batch with every target masked skipped");
                    continue;
                }
                other => other?,
            };
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!("loss {} in epoch {epoch}", loss.total)));
            }
            optimizer_step(&mut self.estimator, &grad, &mut self.optimizer, lr)?;
            for (s, v) in sums.iter_mut().zip([loss.total, loss.mse, loss.interval, loss.chain]) {
                *s += v;
            }
            batches += 1;
        }
        let mean = |s: f64| if batches == 0 { 0.0 } else { s / batches as f64 };
        let report = evaluate(&self.heldout, &self.estimator);
        self.epoch += 1;
        let metrics = EpochMetrics {
            epoch,
            lr,
            loss: mean(sums[0]),
            mse: mean(sums[1]),
            interval: mean(sums[2]),
            chain: mean(sums[3]),
            e_acc: report.acc(),
            mean_e_pes: report.mean_pes,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.5} held-out mean E_acc {:?} mean E_pes {:?}",
            metrics.loss,
            report.mean_acc,
            metrics.mean_e_pes
        );
        Ok(metrics)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::with_capacity(self.config.epochs.saturating_sub(self.epoch));
        while !self.is_finished() {
            log.push(self.run_epoch()?);
        }
        Ok(log)
    }
}

fn check_corpus(episodes: &[Episode], config: &TrainConfig) -> Result<()> {
    let collisions = episodes.iter().filter(|e| e.collided()).count();
    if collisions == 0 || collisions == episodes.len() {
        return Err(Error::DegenerateCorpus(format!(
            "{collisions} of {} episodes end in a collision; both kinds are needed",
            episodes.len()
        )));
    }
    if let Some(e) = episodes.iter().find(|e| e.obs_dim() != config.estimator.input_dim) {
        return Err(Error::Dimension { expected: config.estimator.input_dim, actual: e.obs_dim() });
    }
    let mut ids: Vec<u64> = episodes.iter().map(|e| e.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("episode ids must be unique"));
    }
    Ok(())
}

/// Full run from scratch: the trained estimator and one log row per epoch.
pub fn train(episodes: &[Episode], cfg: &TrainConfig) -> Result<(MultiHeadEstimator, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(episodes, cfg.clone())?;
    let log = trainer.run()?;
    Ok((trainer.into_estimator(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_episodes, ChainWorldSpec, EnvSpec};

    fn chain_corpus(n: usize) -> Vec<Episode> {
        generate_episodes(&EnvSpec::Chain(ChainWorldSpec::demo()), n, 5).unwrap().0.episodes
    }

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::small(15, 4, 3);
        cfg.estimator.backbone_layers = vec![8];
        cfg.estimator.head_layers = vec![4, 1];
        cfg.epochs = 3;
        cfg.samples_per_epoch = 64;
        cfg
    }

    #[test]
    fn schedule_examples() {
        let mut cfg = tiny_config();
        cfg.lr_start = 1e-5;
        cfg.lr_end = 1e-6;
        cfg.epochs = 50;
        assert_eq!(lr_schedule(0, &cfg), 1e-5);
        assert!((lr_schedule(49, &cfg) - 1e-6).abs() < 1e-20);
        let mid = 1e-5 * 10f64.powf(-24.0 / 49.0);
        assert!((lr_schedule(24, &cfg) - mid).abs() < 1e-18);
        assert!((mid - 3.24e-6).abs() < 5e-9);
        cfg.epochs = 1;
        assert_eq!(lr_schedule(0, &cfg), 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(tiny_config().validate().is_ok());
        let mut c = tiny_config();
        c.lr_end = c.lr_start * 2.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.eval_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.horizon.n_heads = 5;
        c.horizon.trunc_n = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_class_corpus_is_rejected() {
        let safe: Vec<Episode> = chain_corpus(200).into_iter().filter(|e| !e.collided()).collect();
        assert!(matches!(train(&safe, &tiny_config()), Err(Error::DegenerateCorpus(_))));
    }

    #[test]
    fn zero_epochs_leave_the_estimator_unchanged() {
        let eps = chain_corpus(100);
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let (est, log) = train(&eps, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(est, MultiHeadEstimator::new(cfg.estimator.clone()).unwrap());
    }

    #[test]
    fn runs_are_deterministic_and_logs_finite() {
        let eps = chain_corpus(100);
        let cfg = tiny_config();
        let (a, la) = train(&eps, &cfg).unwrap();
        let (b, lb) = train(&eps, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.len(), cfg.epochs);
        assert!(la.iter().all(|m| m.loss.is_finite()));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let eps = chain_corpus(100);
        let cfg = tiny_config();
        let (full, full_log) = train(&eps, &cfg).unwrap();

        let mut first = Trainer::new(&eps, cfg.clone()).unwrap();
        let head = vec![first.run_epoch().unwrap()];
        let ckpt = first.checkpoint("x");
        let mut rest = Trainer::resume(&eps, ckpt, None).unwrap();
        assert_eq!(rest.epoch(), 1);
        let tail = rest.run().unwrap();
        assert_eq!(rest.estimator(), &full);
        assert_eq!([head, tail].concat(), full_log);
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let eps = chain_corpus(50);
        let held = split(&eps, 0.2, 1);
        assert_eq!(held.len(), 10);
        let trainer = Trainer::new(&eps, tiny_config()).unwrap();
        assert_eq!(trainer.heldout().len() + trainer.train_set.len(), 50);
        assert!(trainer.train_set.iter().all(|e| trainer.heldout_ids().binary_search(&e.id).is_err()));
    }

    #[test]
    fn metrics_csv_has_one_row_per_epoch() {
        let m = EpochMetrics {
            epoch: 0,
            lr: 0.5,
            loss: 1.0,
            mse: 0.5,
            interval: 0.25,
            chain: 0.25,
            e_acc: vec![Some(0.1), None],
            mean_e_pes: Some(-0.01),
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[m.clone(), EpochMetrics { epoch: 1, ..m }], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,lr,loss,mse,interval,chain,e_acc_1,e_acc_2,mean_e_pes");
        assert_eq!(lines[1], "0,0.5,1,0.5,0.25,0.25,0.1,,-0.01");
        assert_eq!(lines.len(), 3);
    }
}
