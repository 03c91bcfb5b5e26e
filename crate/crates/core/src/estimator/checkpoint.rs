//! Model checkpoints: a single JSON document holding the configuration echo,
//! the flat parameter vector with its tensor layout, and the optimizer state.
//!
//! Floats are written in shortest round-trip form, so saving the same state
//! twice gives identical bytes and loading restores every bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, MultiHeadEstimator, TensorLayout};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "cumrisk-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Hash of the environment spec the training episodes came from.
    pub spec_hash: String,
    pub heldout_ids: Vec<u64>,
    pub layout: Vec<TensorLayout>,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        estimator: &MultiHeadEstimator,
        optimizer: AdamState,
        epoch: usize,
        spec_hash: String,
        heldout_ids: Vec<u64>,
    ) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            epoch,
            spec_hash,
            heldout_ids,
            layout: estimator.layout(),
            params: estimator.params().to_vec(),
            optimizer,
        }
    }

    pub fn estimator(&self) -> Result<MultiHeadEstimator> {
        let est = MultiHeadEstimator::from_params(self.config.estimator.clone(), self.params.clone())?;
        if est.layout() != self.layout {
            return Err(Error::config("checkpoint tensor layout does not match its estimator config"));
        }
        Ok(est)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        if ckpt.format != FORMAT {
            return Err(Error::config(format!("not a checkpoint: format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        if ckpt.optimizer.m.len() != ckpt.params.len() || ckpt.optimizer.v.len() != ckpt.params.len() {
            return Err(Error::Dimension { expected: ckpt.params.len(), actual: ckpt.optimizer.m.len() });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    #[test]
    fn round_trip_is_bit_exact_and_byte_stable() {
        let cfg = TrainConfig::small(6, 4, 9);
        let est = MultiHeadEstimator::new(cfg.estimator.clone()).unwrap();
        let mut opt = AdamState::new(est.param_count());
        opt.step = 3;
        opt.m[0] = 0.1 + 0.2;
        let ckpt = Checkpoint::new(cfg, &est, opt, 2, "deadbeef".into(), vec![4, 1]);

        let mut a = Vec::new();
        ckpt.write_to(&mut a).unwrap();
        let back = Checkpoint::read_from(a.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.estimator().unwrap(), est);

        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_documents() {
        let cfg = TrainConfig::small(3, 2, 1);
        let est = MultiHeadEstimator::new(cfg.estimator.clone()).unwrap();
        let mut ckpt = Checkpoint::new(cfg, &est, AdamState::new(est.param_count()), 0, String::new(), vec![]);
        ckpt.version = 99;
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }
}
