//! Recorded fixed-policy rollouts and their line-oriented text format.
//!
//! Schema version 1, one record per line, fields separated by single spaces:
//!
//! ```text
//! cumrisk-episodes v1 spec_hash=<hex> obs_dim=<d> delta_t=<seconds> episodes=<count>
//! episode id=<id> seed=<seed> done=<collision|time_limit|blocked> steps=<L> max_steps=<limit>
//! step <t> <collision 0|1> <obs_1> ... <obs_d>
//! ```
//!
//! Each episode header is followed by exactly `L` step records. Step `t`
//! carries the observation of `s(t)` and the collision flag `r(t+1)`.
//! Observation values are written with six decimals.

use std::io::{BufRead, Write};

use crate::credit::{RewardTrace, Terminal};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "cumrisk-episodes";
pub(crate) const OBS_DECIMALS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub seed: u64,
    pub max_steps: usize,
    obs_dim: usize,
    observations: Vec<f64>,
    trace: RewardTrace,
}

impl Episode {
    pub fn new(
        id: u64,
        seed: u64,
        obs_dim: usize,
        observations: Vec<f64>,
        rewards: Vec<f64>,
        done: Terminal,
        max_steps: usize,
    ) -> Result<Self> {
        if obs_dim == 0 || observations.len() != rewards.len() * obs_dim {
            return Err(Error::Dimension { expected: rewards.len() * obs_dim, actual: observations.len() });
        }
        if rewards.is_empty() {
            return Err(Error::Empty(format!("episode {id} has no steps")));
        }
        if rewards.len() > max_steps {
            return Err(Error::config(format!("episode {id} is longer than its step limit {max_steps}")));
        }
        let len = rewards.len();
        let censor = if done == Terminal::Collision { max_steps } else { len };
        let trace = RewardTrace::new(rewards, done)?.with_censor(censor);
        Ok(Episode { id, seed, max_steps, obs_dim, observations, trace })
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn trace(&self) -> &RewardTrace {
        &self.trace
    }

    pub fn done(&self) -> Terminal {
        self.trace.terminal()
    }

    pub fn collided(&self) -> bool {
        self.done() == Terminal::Collision
    }
}

/// A collection of episodes sharing one observation layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSet {
    pub spec_hash: String,
    pub obs_dim: usize,
    pub delta_t: f64,
    pub episodes: Vec<Episode>,
}

impl EpisodeSet {
    pub fn collision_count(&self) -> usize {
        self.episodes.iter().filter(|e| e.collided()).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{MAGIC} v{SCHEMA_VERSION} spec_hash={} obs_dim={} delta_t={} episodes={}",
            self.spec_hash,
            self.obs_dim,
            self.delta_t,
            self.episodes.len()
        )?;
        let mut line = String::new();
        for ep in &self.episodes {
            writeln!(
                w,
                "episode id={} seed={} done={} steps={} max_steps={}",
                ep.id,
                ep.seed,
                ep.done(),
                ep.len(),
                ep.max_steps
            )?;
            for t in 0..ep.len() {
                line.clear();
                use std::fmt::Write as _;
                let _ = write!(line, "step {t} {}", ep.trace().rewards()[t] as u8);
                for v in ep.observation(t) {
                    let _ = write!(line, " {v:.OBS_DECIMALS$}");
                }
                writeln!(w, "{line}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(k, l)| (k + 1, l));
        let (lineno, header) = match lines.next() {
            Some((n, l)) => (n, l?),
            None => return Err(Error::format(1, "empty episode file")),
        };
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some(MAGIC) {
            return Err(Error::format(lineno, "missing cumrisk-episodes header"));
        }
        let version = tokens.next().unwrap_or_default();
        if version != format!("v{SCHEMA_VERSION}") {
            return Err(Error::format(lineno, format!("unsupported schema version {version:?}")));
        }
        let fields = KeyValues::new(lineno, tokens)?;
        let spec_hash = fields.get("spec_hash")?.to_string();
        let obs_dim: usize = fields.parse("obs_dim")?;
        let delta_t: f64 = fields.parse("delta_t")?;
        let count: usize = fields.parse("episodes")?;

        let mut episodes = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, line) = match lines.next() {
                Some((n, l)) => (n, l?),
                None => return Err(Error::format(0, format!("expected {count} episodes, found {}", episodes.len()))),
            };
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("episode") {
                return Err(Error::format(lineno, "expected an episode header"));
            }
            let fields = KeyValues::new(lineno, tokens)?;
            let id: u64 = fields.parse("id")?;
            let seed: u64 = fields.parse("seed")?;
            let done: Terminal = fields.get("done")?.parse().map_err(|e: Error| Error::format(lineno, e.to_string()))?;
            let steps: usize = fields.parse("steps")?;
            let max_steps: usize = fields.parse("max_steps")?;

            let mut observations = Vec::with_capacity(steps * obs_dim);
            let mut rewards = Vec::with_capacity(steps);
            for t in 0..steps {
                let (lineno, line) = match lines.next() {
                    Some((n, l)) => (n, l?),
                    None => return Err(Error::format(lineno, format!("episode {id} ends after {t} of {steps} steps"))),
                };
                let mut tokens = line.split_whitespace();
                if tokens.next() != Some("step") {
                    return Err(Error::format(lineno, "expected a step record"));
                }
                let index: usize = parse_token(lineno, tokens.next(), "step index")?;
                if index != t {
                    return Err(Error::format(lineno, format!("step index {index}, expected {t}")));
                }
                let flag: u8 = parse_token(lineno, tokens.next(), "collision flag")?;
                if flag > 1 {
                    return Err(Error::format(lineno, "collision flag must be 0 or 1"));
                }
                rewards.push(f64::from(flag));
                let before = observations.len();
                for tok in tokens {
                    let v: f64 = parse_token(lineno, Some(tok), "observation value")?;
                    observations.push(v);
                }
                if observations.len() - before != obs_dim {
                    return Err(Error::format(
                        lineno,
                        format!("observation has {} values, schema says {obs_dim}", observations.len() - before),
                    ));
                }
            }
            let ep = Episode::new(id, seed, obs_dim, observations, rewards, done, max_steps)
                .map_err(|e| Error::format(lineno, e.to_string()))?;
            episodes.push(ep);
        }
        if let Some((lineno, line)) = lines.next() {
            if !line?.trim().is_empty() {
                return Err(Error::format(lineno, "trailing data after last episode"));
            }
        }
        Ok(EpisodeSet { spec_hash, obs_dim, delta_t, episodes })
    }
}

/// Rounds to the precision of the text format so files round-trip exactly.
pub(crate) fn quantize(v: f64) -> f64 {
    let scale = 10f64.powi(OBS_DECIMALS as i32);
    let q = (v * scale).round() / scale;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

fn parse_token<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::format(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| Error::format(line, format!("bad {what} {tok:?}")))
}

struct KeyValues<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn new(line: usize, tokens: impl Iterator<Item = &'a str>) -> Result<Self> {
        let pairs = tokens
            .map(|tok| tok.split_once('=').ok_or_else(|| Error::format(line, format!("expected key=value, got {tok:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(KeyValues { line, pairs })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::format(self.line, format!("missing field {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        parse_token(self.line, Some(self.get(key)?), key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> EpisodeSet {
        let a = Episode::new(0, 11, 2, vec![0.5, 0.25, 1.0, 0.0], vec![0.0, 1.0], Terminal::Collision, 10).unwrap();
        let b = Episode::new(1, 12, 2, vec![0.125, -3.5], vec![0.0], Terminal::Blocked, 10).unwrap();
        EpisodeSet { spec_hash: "abc123".into(), obs_dim: 2, delta_t: 0.1, episodes: vec![a, b] }
    }

    #[test]
    fn round_trip() {
        let set = sample_set();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = EpisodeSet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn censor_follows_done_reason() {
        let set = sample_set();
        assert_eq!(set.episodes[0].trace().censor(), Some(10));
        assert_eq!(set.episodes[1].trace().censor(), Some(1));
    }

    #[test]
    fn rejects_wrong_version_and_dimension() {
        let set = sample_set();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_version = text.replacen("v1", "v9", 1);
        assert!(matches!(EpisodeSet::read_from(bad_version.as_bytes()), Err(Error::Format { line: 1, .. })));

        let bad_dim = text.replacen("obs_dim=2", "obs_dim=3", 1);
        assert!(matches!(EpisodeSet::read_from(bad_dim.as_bytes()), Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn quantized_values_round_trip_through_text() {
        for v in [0.1234567891, -17.0000004, 3.9999995, 1e-9] {
            let q = quantize(v);
            let text = format!("{q:.OBS_DECIMALS$}");
            assert_eq!(text.parse::<f64>().unwrap(), q);
        }
    }
}
