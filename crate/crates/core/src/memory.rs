//! Fixed-capacity replay buffer ranked by memory score.
//!
//! A candidate's memory score is its entropy term times one minus its mean
//! cosine similarity to the other candidates (current buffer plus newly
//! queried samples). Entropies are cached at insertion and never recomputed;
//! similarities are recomputed on every update because the candidate set
//! changes.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LabeledInput, Network};
use crate::query::{mean_cosine_to_others, spreads_and_entropies, top_positions, Queried};
use crate::stream::{Origin, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub id: u64,
    pub input: Vec<f32>,
    pub label: u32,
    /// Entropy term at insertion time.
    pub entropy: f64,
    pub inserted_at: usize,
    /// Bookkeeping only; never used for scoring or training.
    pub origin: Origin,
}

impl LabeledInput for MemoryEntry {
    fn input(&self) -> &[f32] {
        &self.input
    }

    fn label(&self) -> u32 {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    entries: Vec<MemoryEntry>,
    capacity: usize,
}

/// Degenerate (zero-spread) entropies are stored as the most negative finite
/// value so cached entropies stay finite.
fn finite_entropy(h: f64) -> f64 {
    if h.is_finite() {
        h
    } else {
        f64::MIN
    }
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity 0".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
        })
    }

    pub fn from_entries(entries: Vec<MemoryEntry>, capacity: usize) -> Result<Self> {
        let mut buf = Self::new(capacity)?;
        if entries.len() > capacity {
            return Err(Error::InvalidArgument(format!(
                "{} entries exceed capacity {capacity}",
                entries.len()
            )));
        }
        let mut ids = HashSet::new();
        if !entries.iter().all(|e| ids.insert(e.id)) {
            return Err(Error::InvalidArgument("duplicate ids in buffer".into()));
        }
        buf.entries = entries;
        Ok(buf)
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `(class, count)` pairs sorted by class.
    pub fn composition(&self) -> Vec<(u32, usize)> {
        let mut labels: Vec<u32> = self.entries.iter().map(|e| e.label).collect();
        labels.sort_unstable();
        let mut out: Vec<(u32, usize)> = Vec::new();
        for l in labels {
            match out.last_mut() {
                Some((c, n)) if *c == l => *n += 1,
                _ => out.push((l, 1)),
            }
        }
        out
    }
}

/// Fills a buffer with a uniform sample without replacement of
/// `min(capacity, |dataset|)` items, caching entropies under `net`.
pub fn init_buffer<R: Rng + ?Sized>(
    net: &Network,
    dataset: &[Sample],
    capacity: usize,
    rng: &mut R,
) -> Result<MemoryBuffer> {
    if dataset.is_empty() {
        return Err(Error::Empty("initial dataset"));
    }
    let take = capacity.min(dataset.len());
    let picked: Vec<&Sample> = index::sample(rng, dataset.len(), take)
        .into_iter()
        .map(|i| &dataset[i])
        .collect();
    let inputs: Vec<&[f32]> = picked.iter().map(|s| s.input.as_slice()).collect();
    let entropies = spreads_and_entropies(net, &inputs)?;
    let entries = picked
        .into_iter()
        .zip(entropies)
        .map(|(s, (_, h))| MemoryEntry {
            id: s.id,
            input: s.input.clone(),
            label: s.label,
            entropy: finite_entropy(h),
            inserted_at: 0,
            origin: s.origin,
        })
        .collect();
    MemoryBuffer::from_entries(entries, capacity)
}

/// Memory scores over the candidate set `buffer ∪ queried`, buffer first.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryScores {
    /// One score per candidate, buffer entries then queried samples.
    pub scores: Vec<f64>,
    /// Entropy term of each queried sample under the current network.
    pub fresh_entropy: Vec<f64>,
}

/// `H(x) * (1 - mean cosine to the other candidates)` with the given
/// entropies; exposed for callers that already hold them.
pub fn memory_scores_with(
    inputs: &[&[f32]],
    ids: &[u64],
    entropies: &[f64],
    chunk_size: usize,
) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::Empty("memory candidate set"));
    }
    let cos = mean_cosine_to_others(inputs, ids, chunk_size)?;
    Ok(entropies
        .iter()
        .zip(cos)
        .map(|(h, c)| h * (1.0 - c))
        .collect())
}

pub fn memory_scores(
    buffer: &MemoryBuffer,
    queried: &[Queried],
    net: &Network,
    chunk_size: usize,
) -> Result<MemoryScores> {
    let new_inputs: Vec<&[f32]> = queried.iter().map(|q| q.sample.input.as_slice()).collect();
    let fresh_entropy: Vec<f64> = if new_inputs.is_empty() {
        Vec::new()
    } else {
        spreads_and_entropies(net, &new_inputs)?
            .into_iter()
            .map(|(_, h)| finite_entropy(h))
            .collect()
    };
    let inputs: Vec<&[f32]> = buffer
        .entries
        .iter()
        .map(|e| e.input.as_slice())
        .chain(new_inputs)
        .collect();
    let ids: Vec<u64> = buffer
        .entries
        .iter()
        .map(|e| e.id)
        .chain(queried.iter().map(|q| q.sample.id))
        .collect();
    let entropies: Vec<f64> = buffer
        .entries
        .iter()
        .map(|e| e.entropy)
        .chain(fresh_entropy.iter().copied())
        .collect();
    let scores = memory_scores_with(&inputs, &ids, &entropies, chunk_size)?;
    Ok(MemoryScores {
        scores,
        fresh_entropy,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateOutcome {
    /// Queried samples that made it into the buffer.
    pub n_new_inserted: usize,
    pub inserted_ids: Vec<u64>,
    pub evicted_ids: Vec<u64>,
}

/// Keeps the top-`capacity` candidates of `buffer ∪ queried` by memory score
/// (ties to the lower id). Surviving entries keep their cached entropy.
pub fn update_buffer(
    buffer: &mut MemoryBuffer,
    queried: &[Queried],
    scores: &MemoryScores,
    timestep: usize,
) -> Result<UpdateOutcome> {
    if queried.is_empty() {
        return Ok(UpdateOutcome::default());
    }
    let n_old = buffer.entries.len();
    if scores.scores.len() != n_old + queried.len() || scores.fresh_entropy.len() != queried.len() {
        return Err(Error::Shape(
            "memory scores do not cover buffer and queried samples".into(),
        ));
    }
    let mut candidates: Vec<MemoryEntry> = std::mem::take(&mut buffer.entries);
    candidates.extend(
        queried
            .iter()
            .zip(&scores.fresh_entropy)
            .map(|(q, &h)| MemoryEntry {
                id: q.sample.id,
                input: q.sample.input.clone(),
                label: q.sample.label,
                entropy: h,
                inserted_at: timestep,
                origin: q.sample.origin,
            }),
    );
    let ids: Vec<u64> = candidates.iter().map(|e| e.id).collect();
    let mut keep = top_positions(&scores.scores, &ids, buffer.capacity);
    // Stored order: surviving buffer entries first, then insertions, each in
    // candidate order.
    keep.sort_unstable();
    let kept: HashSet<usize> = keep.iter().copied().collect();
    let mut out = UpdateOutcome::default();
    for (i, e) in candidates.iter().enumerate() {
        match (kept.contains(&i), i < n_old) {
            (false, true) => out.evicted_ids.push(e.id),
            (true, false) => out.inserted_ids.push(e.id),
            _ => {}
        }
    }
    out.n_new_inserted = out.inserted_ids.len();
    buffer.entries = candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| kept.contains(i))
        .map(|(_, e)| e)
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stream::Origin;

    fn entry(id: u64, input: Vec<f32>, entropy: f64) -> MemoryEntry {
        MemoryEntry {
            id,
            input,
            label: 0,
            entropy,
            inserted_at: 0,
            origin: Origin::Clean,
        }
    }

    fn queried(id: u64, input: Vec<f32>) -> Queried {
        Queried {
            sample: Sample {
                id,
                input,
                label: 1,
                origin: Origin::Clean,
            },
            score: None,
        }
    }

    #[test]
    fn identical_candidate_scores_zero_and_orthogonal_scores_entropy() {
        let s = memory_scores_with(&[&[1.0, 1.0], &[2.0, 2.0]], &[0, 1], &[1.7, 1.7], 1).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
        let s = memory_scores_with(&[&[1.0, 0.0], &[0.0, 3.0]], &[0, 1], &[1.7, 0.4], 8).unwrap();
        assert_eq!(s, vec![1.7, 0.4]);
    }

    #[test]
    fn duplicate_scores_lower() {
        // Candidate 0 duplicates candidate 2; candidate 1 is distinct; equal H.
        let inputs: [&[f32]; 3] = [&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]];
        let s = memory_scores_with(&inputs, &[0, 1, 2], &[1.0, 1.0, 1.0], 2).unwrap();
        // Oracle: cos(0,1)=0, cos(0,2)=1 -> mean 0.5; cos(1,0)=cos(1,2)=0 -> mean 0.
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert!(s[0] < s[1]);
    }

    #[test]
    fn empty_query_is_a_no_op() {
        let mut buf = MemoryBuffer::from_entries(vec![entry(3, vec![1.0, 2.0], 1.0)], 4).unwrap();
        let before = buf.clone();
        let scores = MemoryScores {
            scores: vec![0.5],
            fresh_entropy: vec![],
        };
        let out = update_buffer(&mut buf, &[], &scores, 2).unwrap();
        assert_eq!(out.n_new_inserted, 0);
        assert_eq!(buf, before);
    }

    #[test]
    fn small_candidate_set_is_kept_whole() {
        let mut buf = MemoryBuffer::from_entries(vec![entry(0, vec![1.0, 0.0], 1.0)], 5).unwrap();
        let q = vec![queried(10, vec![0.0, 1.0]), queried(11, vec![1.0, 1.0])];
        let scores = MemoryScores {
            scores: vec![0.1, 0.2, 0.3],
            fresh_entropy: vec![2.0, 3.0],
        };
        let out = update_buffer(&mut buf, &q, &scores, 4).unwrap();
        assert_eq!(out.n_new_inserted, 2);
        assert_eq!(buf.len(), 3);
        let e = buf.entries().iter().find(|e| e.id == 11).unwrap();
        assert_eq!((e.entropy, e.inserted_at, e.label), (3.0, 4, 1));
    }

    #[test]
    fn eviction_keeps_top_scores_and_cached_entropy() {
        let mut buf = MemoryBuffer::from_entries(
            vec![entry(0, vec![1.0, 0.0], 0.9), entry(1, vec![0.0, 1.0], 0.8)],
            2,
        )
        .unwrap();
        let q = vec![queried(5, vec![1.0, 1.0])];
        let scores = MemoryScores {
            scores: vec![0.3, 0.1, 0.2],
            fresh_entropy: vec![2.5],
        };
        let out = update_buffer(&mut buf, &q, &scores, 1).unwrap();
        assert_eq!(out.inserted_ids, vec![5]);
        assert_eq!(out.evicted_ids, vec![1]);
        assert_eq!(buf.entries()[0].entropy, 0.9);
        assert_eq!(
            buf.entries().iter().map(|e| e.id).collect::<Vec<_>>(),
            vec![0, 5]
        );
    }

    #[test]
    fn init_buffer_is_seeded_uniform_subset() {
        let net = Network::mlp(2, &[4], &[0, 1], &mut rng::stream(0, "init")).unwrap();
        let data: Vec<Sample> = (0..50)
            .map(|i| Sample {
                id: i,
                input: vec![i as f32 + 1.0, 1.0],
                label: (i % 2) as u32,
                origin: Origin::Clean,
            })
            .collect();
        let a = init_buffer(&net, &data, 20, &mut rng::stream(4, "buffer")).unwrap();
        let b = init_buffer(&net, &data, 20, &mut rng::stream(4, "buffer")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let whole = init_buffer(&net, &data, 500, &mut rng::stream(4, "buffer")).unwrap();
        assert_eq!(whole.len(), 50);
        assert!(init_buffer(&net, &[], 5, &mut rng::stream(4, "buffer")).is_err());
    }

    #[test]
    fn composition_counts_labels() {
        let mut e = vec![
            entry(0, vec![1.0], 0.0),
            entry(1, vec![1.0], 0.0),
            entry(2, vec![1.0], 0.0),
        ];
        e[1].label = 4;
        let buf = MemoryBuffer::from_entries(e, 3).unwrap();
        assert_eq!(buf.composition(), vec![(0, 2), (4, 1)]);
    }
}
