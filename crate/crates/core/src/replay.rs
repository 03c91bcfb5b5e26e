//! Stratified sampling over recorded episodes.
//!
//! Collision episodes are rare, so samples near a collision are accepted with
//! probability `p_c` and all others with the smaller `p_nc`. The squared
//! error of an accepted collision-related sample is scaled by `p_nc / p_c`,
//! which makes every sample's expected contribution per draw equal to `p_nc`
//! times its uniform-sampling contribution.

use rand::Rng;

use crate::episode::Episode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleRef {
    /// Position of the episode in the indexed collection.
    pub episode: usize,
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub sample: SampleRef,
    /// The collision lies within the next `n_heads` steps.
    pub collision_related: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayIndex {
    entries: Vec<IndexEntry>,
    collision_related: usize,
}

impl ReplayIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn collision_related_count(&self) -> usize {
        self.collision_related
    }

    pub fn other_count(&self) -> usize {
        self.entries.len() - self.collision_related
    }
}

/// Indexes every recorded step of every episode once.
pub fn build_index<'e>(episodes: impl IntoIterator<Item = &'e Episode>, n_heads: usize) -> Result<ReplayIndex> {
    let mut entries = Vec::new();
    let mut collision_related = 0;
    let mut count = 0;
    for (k, ep) in episodes.into_iter().enumerate() {
        count += 1;
        let hit = ep.trace().collision_step();
        for t in 0..ep.len() {
            let related = hit.is_some_and(|step| t + n_heads >= step);
            collision_related += usize::from(related);
            entries.push(IndexEntry { sample: SampleRef { episode: k, t }, collision_related: related });
        }
    }
    if count == 0 {
        return Err(Error::Empty("no episodes to index".into()));
    }
    Ok(ReplayIndex { entries, collision_related })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drawn {
    pub sample: SampleRef,
    pub collision_related: bool,
    /// Importance factor on the squared error: `p_nc / p_c` or 1.
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub samples: Vec<Drawn>,
    /// Uniform proposals drawn, accepted or not.
    pub proposals: usize,
}

/// Rejection sampling: propose uniformly, accept collision-related entries
/// with probability `p_c` and the rest with `p_nc`, until `batch_size` are in.
pub fn sample<R: Rng + ?Sized>(
    index: &ReplayIndex,
    batch_size: usize,
    rng: &mut R,
    p_c: f64,
    p_nc: f64,
) -> Result<SampledBatch> {
    if index.is_empty() {
        return Err(Error::Empty("replay index is empty".into()));
    }
    let unit = |p: f64| p > 0.0 && p <= 1.0;
    if !unit(p_c) || !unit(p_nc) {
        return Err(Error::config("acceptance probabilities must lie in (0, 1]"));
    }
    let mut samples = Vec::with_capacity(batch_size);
    let mut proposals = 0;
    while samples.len() < batch_size {
        proposals += 1;
        let entry = index.entries[rng.gen_range(0..index.entries.len())];
        let (accept, factor) = if entry.collision_related { (p_c, p_nc / p_c) } else { (p_nc, 1.0) };
        if rng.gen::<f64>() < accept {
            samples.push(Drawn { sample: entry.sample, collision_related: entry.collision_related, factor });
        }
    }
    Ok(SampledBatch { samples, proposals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::Terminal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(len: usize, done: Terminal) -> Episode {
        let mut rewards = vec![0.0; len];
        if done == Terminal::Collision {
            rewards[len - 1] = 1.0;
        }
        Episode::new(0, 0, 1, vec![0.0; len], rewards, done, 1000).unwrap()
    }

    #[test]
    fn window_definition() {
        let idx = build_index(&[episode(30, Terminal::Collision)], 20).unwrap();
        assert_eq!(idx.collision_related_count(), 20);
        let related: Vec<usize> = idx.entries().iter().filter(|e| e.collision_related).map(|e| e.sample.t).collect();
        assert_eq!(related, (10..30).collect::<Vec<_>>());
    }

    #[test]
    fn all_or_nothing_corpora() {
        let all = build_index(&[episode(5, Terminal::Collision), episode(8, Terminal::Collision)], 10).unwrap();
        assert_eq!(all.collision_related_count(), all.len());
        let none = build_index(&[episode(5, Terminal::TimeLimit), episode(8, Terminal::Blocked)], 10).unwrap();
        assert_eq!(none.collision_related_count(), 0);
        assert_eq!(none.len(), 13);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(build_index(&[] as &[Episode], 3).is_err());
        let idx = ReplayIndex { entries: vec![], collision_related: 0 };
        assert!(sample(&idx, 1, &mut ChaCha8Rng::seed_from_u64(0), 0.5, 0.5).is_err());
    }

    #[test]
    fn equal_probabilities_give_unit_factors() {
        let idx = build_index(&[episode(30, Terminal::Collision), episode(30, Terminal::TimeLimit)], 5).unwrap();
        let batch = sample(&idx, 200, &mut ChaCha8Rng::seed_from_u64(1), 0.3, 0.3).unwrap();
        assert!(batch.samples.iter().all(|d| d.factor == 1.0));
    }

    #[test]
    fn collision_factor_matches_acceptance_ratio() {
        let idx = build_index(&[episode(30, Terminal::Collision)], 5).unwrap();
        let batch = sample(&idx, 100, &mut ChaCha8Rng::seed_from_u64(2), 0.25, 0.025).unwrap();
        for d in &batch.samples {
            let expected = if d.collision_related { 0.025 / 0.25 } else { 1.0 };
            assert_eq!(d.factor, expected);
        }
        assert!(batch.samples.iter().any(|d| d.collision_related));
    }

    #[test]
    fn accepted_fraction_follows_acceptance_ratio() {
        // 50/50 index, p_c = 0.5, p_nc = 0.05 -> 0.5 / (0.5 + 0.05) = 10/11
        let idx = build_index(&[episode(10, Terminal::Collision), episode(10, Terminal::TimeLimit)], 10).unwrap();
        assert_eq!(idx.collision_related_count(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let batch = sample(&idx, draws, &mut rng, 0.5, 0.05).unwrap();
        let frac = batch.samples.iter().filter(|d| d.collision_related).count() as f64 / draws as f64;
        let expected = 10.0 / 11.0;
        let se = (expected * (1.0 - expected) / draws as f64).sqrt();
        assert!((frac - expected).abs() < 4.0 * se, "{frac} vs {expected}");
    }

    #[test]
    fn sampling_is_reproducible_and_refs_are_valid() {
        let eps = [episode(12, Terminal::Collision), episode(7, Terminal::TimeLimit)];
        let idx = build_index(&eps, 4).unwrap();
        let a = sample(&idx, 64, &mut ChaCha8Rng::seed_from_u64(4), 0.25, 0.025).unwrap();
        let b = sample(&idx, 64, &mut ChaCha8Rng::seed_from_u64(4), 0.25, 0.025).unwrap();
        assert_eq!(a, b);
        for d in &a.samples {
            assert!(d.sample.t < eps[d.sample.episode].len());
        }
    }
}
