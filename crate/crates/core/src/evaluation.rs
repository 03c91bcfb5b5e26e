//! Performance measures against unbiased fixed-finite returns, plus the
//! collision-characteristic and detection-rate tables.
//!
//! Only windows with a known outcome are scored; the same censoring rule as
//! the training targets applies, so the tail of a truncated episode never
//! counts as collision-free.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credit::mc_return;
use crate::env::decode_state;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::estimator::Predictor;
use crate::oracle::OracleTable;

pub const REPORT_VERSION: u32 = 1;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.0125, 0.025, 0.05, 0.1, 0.2];
pub const DEFAULT_INTERVALS: [(f64, f64); 5] = [(0.0, 0.4), (0.4, 0.8), (0.8, 1.2), (1.2, 1.6), (1.6, 2.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head: usize,
    /// Mean squared difference to the fixed-finite return; `None` without samples.
    pub e_acc: Option<f64>,
    /// Mean signed difference `return - estimate`; negative means pessimistic.
    pub e_pes: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heads: Vec<HeadMetrics>,
    pub mean_acc: Option<f64>,
    pub mean_pes: Option<f64>,
}

impl EvalReport {
    pub fn acc(&self) -> Vec<Option<f64>> {
        self.heads.iter().map(|h| h.e_acc).collect()
    }

    pub fn pes(&self) -> Vec<Option<f64>> {
        self.heads.iter().map(|h| h.e_pes).collect()
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Both per-head measures in one pass over every valid (step, head) window.
pub fn evaluate<P: Predictor + Sync + ?Sized>(episodes: &[Episode], predictor: &P) -> EvalReport {
    let n = predictor.n_heads();
    // per-episode partial sums, combined in episode order so results are exact across runs
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = episodes
        .par_iter()
        .map(|ep| {
            let mut sq = vec![0.0; n];
            let mut signed = vec![0.0; n];
            let mut count = vec![0usize; n];
            let trace = ep.trace();
            for t in 0..ep.len() {
                if !trace.is_valid(t, 1) {
                    continue;
                }
                let p = predictor.predict(ep.observation(t));
                for i in 1..=n {
                    let Ok(g) = mc_return(trace, t, i) else { break };
                    let e = g - p[i - 1];
                    sq[i - 1] += e * e;
                    signed[i - 1] += e;
                    count[i - 1] += 1;
                }
            }
            (sq, signed, count)
        })
        .collect();
    let mut sq = vec![0.0; n];
    let mut signed = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (a, b, c) in &partials {
        for k in 0..n {
            sq[k] += a[k];
            signed[k] += b[k];
            count[k] += c[k];
        }
    }
    let heads: Vec<HeadMetrics> = (0..n)
        .map(|k| {
            let c = count[k];
            let avg = |s: f64| (c > 0).then(|| s / c as f64);
            HeadMetrics { head: k + 1, e_acc: avg(sq[k]), e_pes: avg(signed[k]), count: c }
        })
        .collect();
    let mean_acc = mean_of(heads.iter().map(|h| h.e_acc));
    let mean_pes = mean_of(heads.iter().map(|h| h.e_pes));
    EvalReport { heads, mean_acc, mean_pes }
}

pub fn acc_error<P: Predictor + Sync + ?Sized>(episodes: &[Episode], predictor: &P) -> Vec<Option<f64>> {
    evaluate(episodes, predictor).acc()
}

pub fn pes_error<P: Predictor + Sync + ?Sized>(episodes: &[Episode], predictor: &P) -> Vec<Option<f64>> {
    evaluate(episodes, predictor).pes()
}

/// Final-head estimate over the last `n_heads` steps before each collision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    /// Steps before the collision, `n_heads` down to 1.
    pub offsets: Vec<usize>,
    pub mean: Vec<f64>,
    /// `(episode id, curve)` aligned with `offsets`.
    pub curves: Vec<(u64, Vec<f64>)>,
    /// Collision episodes too short for a full curve.
    pub skipped: usize,
}

pub fn collision_characteristic<P: Predictor + ?Sized>(episodes: &[Episode], predictor: &P) -> Characteristic {
    let n = predictor.n_heads();
    let offsets: Vec<usize> = (1..=n).rev().collect();
    let mut curves = Vec::new();
    let mut skipped = 0;
    for ep in episodes.iter().filter(|e| e.collided()) {
        let hit = ep.len();
        if hit < n {
            skipped += 1;
            continue;
        }
        let curve = offsets.iter().map(|&tau| predictor.predict(ep.observation(hit - tau))[n - 1]).collect();
        curves.push((ep.id, curve));
    }
    let mut mean = vec![0.0; n];
    if !curves.is_empty() {
        for (_, c) in &curves {
            mean.iter_mut().zip(c).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= curves.len() as f64);
    }
    Characteristic { offsets, mean, curves, skipped }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionTable {
    pub thresholds: Vec<f64>,
    /// Seconds before the collision, `(start, end]`.
    pub intervals: Vec<(f64, f64)>,
    /// `rates[threshold][interval]`.
    pub rates: Vec<Vec<f64>>,
    pub episodes: usize,
}

/// Fraction of collision episodes whose final head exceeds each threshold at
/// any step whose time to collision lies in each interval.
pub fn detection_rate<P: Predictor + ?Sized>(
    episodes: &[Episode],
    predictor: &P,
    thresholds: &[f64],
    intervals: &[(f64, f64)],
    delta_t: f64,
) -> Result<DetectionTable> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("thresholds must be ascending"));
    }
    if intervals.iter().any(|&(a, b)| !(a >= 0.0 && b > a)) {
        return Err(Error::config("intervals must be nonempty and nonnegative"));
    }
    let collided: Vec<&Episode> = episodes.iter().filter(|e| e.collided()).collect();
    if collided.is_empty() {
        return Err(Error::Empty("no collision episodes to score".into()));
    }
    let to_steps = |s: f64| (s / delta_t).round() as usize;
    let last = predictor.n_heads() - 1;
    let mut hits = vec![vec![0usize; intervals.len()]; thresholds.len()];
    for ep in &collided {
        let hit = ep.len();
        for (k, &(start, end)) in intervals.iter().enumerate() {
            let (lo, hi) = (to_steps(start), to_steps(end));
            // largest final-head value among steps with lo < tau <= hi
            let peak = (lo + 1..=hi.min(hit))
                .map(|tau| predictor.predict(ep.observation(hit - tau))[last])
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
            if let Some(peak) = peak {
                for (j, &theta) in thresholds.iter().enumerate() {
                    if peak > theta {
                        hits[j][k] += 1;
                    }
                }
            }
        }
    }
    let total = collided.len() as f64;
    let rates = hits.iter().map(|row| row.iter().map(|&h| h as f64 / total).collect()).collect();
    Ok(DetectionTable { thresholds: thresholds.to_vec(), intervals: intervals.to_vec(), rates, episodes: collided.len() })
}

/// Mean estimate per (chain state, head) next to the exact value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub state: usize,
    pub head: usize,
    pub mean_estimate: f64,
    pub oracle: f64,
    pub count: usize,
}

impl OracleComparison {
    pub fn abs_error(&self) -> f64 {
        (self.mean_estimate - self.oracle).abs()
    }
}

/// Compares estimates at every recorded chain-world observation with the
/// exact table, keyed by the state in the newest frame.
pub fn oracle_errors<P: Predictor + ?Sized>(
    episodes: &[Episode],
    predictor: &P,
    table: &OracleTable,
) -> Vec<OracleComparison> {
    let n_states = table.n_states();
    let n = predictor.n_heads().min(table.n_heads());
    let mut sums = vec![vec![0.0; n]; n_states];
    let mut counts = vec![0usize; n_states];
    for ep in episodes {
        for t in 0..ep.len() {
            let obs = ep.observation(t);
            let Some(s) = decode_state(obs, n_states) else { continue };
            let p = predictor.predict(obs);
            sums[s].iter_mut().zip(&p).for_each(|(a, v)| *a += v);
            counts[s] += 1;
        }
    }
    let mut out = Vec::new();
    for s in 0..n_states {
        if counts[s] == 0 {
            continue;
        }
        for i in 1..=n {
            out.push(OracleComparison {
                state: s,
                head: i,
                mean_estimate: sums[s][i - 1] / counts[s] as f64,
                oracle: table.get(s, i),
                count: counts[s],
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_head_metrics_csv<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    writeln!(w, "head,e_acc,e_pes,count")?;
    for h in &report.heads {
        writeln!(w, "{},{},{},{}", h.head, opt(h.e_acc), opt(h.e_pes), h.count)?;
    }
    Ok(())
}

pub fn write_characteristic_csv<W: Write>(c: &Characteristic, delta_t: f64, mut w: W) -> Result<()> {
    writeln!(w, "curve,offset_steps,time_to_collision,value")?;
    let rows = std::iter::once(("mean".to_string(), &c.mean)).chain(c.curves.iter().map(|(id, v)| (id.to_string(), v)));
    for (name, values) in rows {
        for (&tau, v) in c.offsets.iter().zip(values) {
            writeln!(w, "{name},{tau},{},{v}", tau as f64 * delta_t)?;
        }
    }
    Ok(())
}

pub fn write_detection_csv<W: Write>(d: &DetectionTable, mut w: W) -> Result<()> {
    writeln!(w, "threshold,interval_start,interval_end,rate,episodes")?;
    for (j, theta) in d.thresholds.iter().enumerate() {
        for (k, (a, b)) in d.intervals.iter().enumerate() {
            writeln!(w, "{theta},{a},{b},{},{}", d.rates[j][k], d.episodes)?;
        }
    }
    Ok(())
}

pub fn write_oracle_csv<W: Write>(rows: &[OracleComparison], mut w: W) -> Result<()> {
    writeln!(w, "state,head,mean_estimate,oracle,abs_error,count")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.state, r.head, r.mean_estimate, r.oracle, r.abs_error(), r.count)?;
    }
    Ok(())
}

/// Structured summary written next to the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub version: u32,
    pub episodes: usize,
    pub collision_episodes: usize,
    pub metrics: EvalReport,
    pub characteristic_curves: usize,
    pub characteristic_skipped: usize,
    pub detection: Option<DetectionTable>,
    pub max_oracle_error: Option<f64>,
}
