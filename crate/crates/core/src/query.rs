//! Active query scoring over the candidate pool.
//!
//! `alpha_q` is the Gaussian differential entropy of a sample's post-batch-norm
//! activation spread, `beta_q` its mean cosine similarity to the rest of the
//! pool in input space, and the query score is their product.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, Network};
use crate::stream::Sample;
use crate::tensor::Tensor;

pub const DEFAULT_CHUNK: usize = 128;

/// Samples per forward pass when scoring.
const SCORE_BATCH: usize = 256;

#[derive(Debug, Clone)]
struct PoolEntry {
    sample: Sample,
    accepted_at: usize,
}

/// Accepted, still-unlabelled stream samples. Labels leave the pool only
/// through [`select_top`], which counts each reveal as an oracle call.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    entries: Vec<PoolEntry>,
    ids: HashSet<u64>,
    oracle_calls: usize,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: Sample, accepted_at: usize) -> Result<()> {
        if !self.ids.insert(sample.id) {
            return Err(Error::InvalidArgument(format!(
                "sample {} already pooled",
                sample.id
            )));
        }
        self.entries.push(PoolEntry {
            sample,
            accepted_at,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.entries[i].sample.input
    }

    pub fn id(&self, i: usize) -> u64 {
        self.entries[i].sample.id
    }

    pub fn accepted_at(&self, i: usize) -> usize {
        self.entries[i].accepted_at
    }

    pub fn inputs(&self) -> Vec<&[f32]> {
        self.entries
            .iter()
            .map(|e| e.sample.input.as_slice())
            .collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.sample.id).collect()
    }

    /// Number of labels revealed so far.
    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    /// Distinct labels present in the pool, sorted. This is metadata for
    /// sizing the classifier head; it reveals no per-sample label.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.entries.iter().map(|e| e.sample.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Removes the entries at `positions` and reveals their labels, in the
    /// order given.
    pub fn reveal(&mut self, positions: &[usize]) -> Vec<Sample> {
        let mut taken: Vec<Option<PoolEntry>> = self.entries.drain(..).map(Some).collect();
        let out: Vec<Sample> = positions
            .iter()
            .map(|&p| taken[p].take().expect("position revealed once").sample)
            .collect();
        self.entries = taken.into_iter().flatten().collect();
        for s in &out {
            self.ids.remove(&s.id);
        }
        self.oracle_calls += out.len();
        out
    }

    /// Drops every entry without revealing labels.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.ids.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    pub sigma_q_sq: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub gamma_q: f64,
}

/// Mean over layers of the mean over channels of the mean over spatial
/// positions of the squared post-affine activations.
pub fn activation_spread(trace: &ActivationTrace, sample: usize) -> f64 {
    let layers = trace.layers();
    let per_layer = layers.iter().enumerate().map(|(l, layer)| {
        let a = trace.activated(l, sample);
        let channel_sum: f64 = a
            .chunks(layer.spatial)
            .map(|pixels| pixels.iter().map(|v| v * v).sum::<f64>() / layer.spatial as f64)
            .sum();
        channel_sum / layer.channels as f64
    });
    per_layer.sum::<f64>() / layers.len() as f64
}

/// Differential entropy of a Gaussian with variance `sigma_sq`:
/// `(1 + ln(2 pi sigma_sq)) / 2`. Zero variance maps to `-inf`.
pub fn entropy_term(sigma_sq: f64) -> f64 {
    if sigma_sq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (1.0 + (2.0 * std::f64::consts::PI * sigma_sq).ln())
}

/// Activation spread and entropy term for each input under the eval-mode
/// network.
pub fn spreads_and_entropies(net: &Network, inputs: &[&[f32]]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(SCORE_BATCH) {
        let (_, trace) = net.infer(&Tensor::from_rows(chunk)?, true)?;
        let trace = trace.expect("capture requested");
        out.extend((0..chunk.len()).map(|i| {
            let s = activation_spread(&trace, i);
            (s, entropy_term(s))
        }));
    }
    Ok(out)
}

fn unit_vectors(inputs: &[&[f32]], ids: &[u64]) -> Result<Vec<Vec<f64>>> {
    inputs
        .iter()
        .zip(ids)
        .map(|(x, &id)| {
            let norm = x
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::DegenerateInput(id));
            }
            Ok(x.iter().map(|&v| v as f64 / norm).collect())
        })
        .collect()
}

/// For every vector, the mean cosine similarity to all *other* vectors.
///
/// Rows are processed `chunk_size` at a time, so the largest intermediate is a
/// `chunk_size x n` block of similarities rather than the full `n x n` matrix.
/// With a single vector the mean over an empty set is taken as 0.
pub fn mean_cosine_to_others(
    inputs: &[&[f32]],
    ids: &[u64],
    chunk_size: usize,
) -> Result<Vec<f64>> {
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk size 0".into()));
    }
    let n = inputs.len();
    let unit = unit_vectors(inputs, ids)?;
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let mut out = Vec::with_capacity(n);
    let mut block = vec![0f64; chunk_size * n];
    for start in (0..n).step_by(chunk_size) {
        let rows = chunk_size.min(n - start);
        for r in 0..rows {
            let a = &unit[start + r];
            for (j, b) in unit.iter().enumerate() {
                block[r * n + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        for r in 0..rows {
            let q = start + r;
            let sum: f64 = (0..n).filter(|&j| j != q).map(|j| block[r * n + j]).sum();
            out.push(sum / (n - 1) as f64);
        }
    }
    Ok(out)
}

/// `beta_q` for one pool entry.
pub fn pool_similarity(pool: &CandidatePool, q_index: usize, chunk_size: usize) -> Result<f64> {
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk size 0".into()));
    }
    let n = pool.len();
    if q_index >= n {
        return Err(Error::InvalidArgument(format!(
            "index {q_index} outside pool of {n}"
        )));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let inputs = pool.inputs();
    let ids = pool.ids();
    let q = &unit_vectors(&inputs[q_index..=q_index], &ids[q_index..=q_index])?[0];
    let mut sum = 0.0;
    for start in (0..n).step_by(chunk_size) {
        let end = (start + chunk_size).min(n);
        let unit = unit_vectors(&inputs[start..end], &ids[start..end])?;
        for (k, u) in unit.iter().enumerate() {
            if start + k != q_index {
                sum += q.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(sum / (n - 1) as f64)
}

/// Query score of every pool entry, in pool order.
pub fn query_scores(
    net: &Network,
    pool: &CandidatePool,
    chunk_size: usize,
) -> Result<Vec<QueryScore>> {
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let inputs = pool.inputs();
    let spreads = spreads_and_entropies(net, &inputs)?;
    let betas = mean_cosine_to_others(&inputs, &pool.ids(), chunk_size)?;
    Ok(spreads
        .into_iter()
        .zip(betas)
        .map(|((sigma_q_sq, alpha_q), beta_q)| QueryScore {
            sigma_q_sq,
            alpha_q,
            beta_q,
            gamma_q: alpha_q * beta_q,
        })
        .collect())
}

/// Ranking key for scores that may be undefined (`-inf * 0`): NaN ranks last.
pub(crate) fn rank_key(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Positions of the `b` best scores, best first; ties go to the lower id.
pub(crate) fn top_positions(scores: &[f64], ids: &[u64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        rank_key(scores[j])
            .total_cmp(&rank_key(scores[i]))
            .then(ids[i].cmp(&ids[j]))
    });
    order.truncate(b);
    order
}

/// A pool sample whose label has been revealed.
#[derive(Debug, Clone)]
pub struct Queried {
    pub sample: Sample,
    /// `None` when the sample was drawn without scoring.
    pub score: Option<QueryScore>,
}

/// Removes the `min(b, |pool|)` highest-scoring entries from the pool and
/// reveals their labels, best first.
pub fn select_top(
    pool: &mut CandidatePool,
    scores: &[QueryScore],
    b: usize,
) -> Result<Vec<Queried>> {
    if b == 0 {
        return Err(Error::InvalidArgument("acquisition batch size 0".into()));
    }
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    if scores.len() != pool.len() {
        return Err(Error::Shape(format!(
            "{} scores for a pool of {}",
            scores.len(),
            pool.len()
        )));
    }
    let gammas: Vec<f64> = scores.iter().map(|s| s.gamma_q).collect();
    let picked = top_positions(&gammas, &pool.ids(), b);
    let revealed = pool.reveal(&picked);
    Ok(revealed
        .into_iter()
        .zip(&picked)
        .map(|(sample, &p)| Queried {
            sample,
            score: Some(scores[p]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::TraceLayer;
    use crate::stream::Origin;

    fn sample(id: u64, input: Vec<f32>) -> Sample {
        Sample {
            id,
            input,
            label: id as u32 % 3,
            origin: Origin::Clean,
        }
    }

    fn pool_of(rows: &[Vec<f32>]) -> CandidatePool {
        let mut p = CandidatePool::new();
        for (i, r) in rows.iter().enumerate() {
            p.push(sample(i as u64, r.clone()), 1).unwrap();
        }
        p
    }

    fn score(gamma_q: f64) -> QueryScore {
        QueryScore {
            sigma_q_sq: 1.0,
            alpha_q: 1.0,
            beta_q: gamma_q,
            gamma_q,
        }
    }

    #[test]
    fn spread_examples() {
        let one = ActivationTrace::new(
            1,
            vec![TraceLayer {
                channels: 1,
                spatial: 2,
                standardized: vec![0.0; 2],
                activated: vec![1.0, -1.0],
            }],
        )
        .unwrap();
        assert_eq!(activation_spread(&one, 0), 1.0);

        let layer = |v: f64| TraceLayer {
            channels: 2,
            spatial: 1,
            standardized: vec![0.0; 2],
            activated: vec![v, v],
        };
        let two =
            ActivationTrace::new(1, vec![layer(0.5f64.sqrt()), layer(1.5f64.sqrt())]).unwrap();
        assert!((activation_spread(&two, 0) - 1.0).abs() < 1e-12);

        let zeros = ActivationTrace::new(1, vec![layer(0.0)]).unwrap();
        assert_eq!(activation_spread(&zeros, 0), 0.0);
    }

    #[test]
    fn entropy_closed_forms() {
        let tau = 2.0 * std::f64::consts::PI;
        assert!((entropy_term(1.0) - 0.5 * (1.0 + tau.ln())).abs() < 1e-12);
        assert!((entropy_term(1.0) - 1.4189).abs() < 1e-4);
        assert!((entropy_term(1.0 / tau) - 0.5).abs() < 1e-12);
        assert!((entropy_term(std::f64::consts::E / tau) - 1.0).abs() < 1e-12);
        assert_eq!(entropy_term(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn similarity_identical_and_orthogonal() {
        let same = pool_of(&vec![vec![0.2, 0.4, 0.1]; 5]);
        assert!((pool_similarity(&same, 2, 2).unwrap() - 1.0).abs() < 1e-12);

        let ortho = pool_of(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ]);
        assert_eq!(pool_similarity(&ortho, 0, 1).unwrap(), 0.0);
        assert_eq!(
            mean_cosine_to_others(&ortho.inputs(), &ortho.ids(), 7).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let p = pool_of(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            pool_similarity(&p, 0, 4),
            Err(Error::DegenerateInput(1))
        ));
    }

    #[test]
    fn single_entry_pool_has_zero_similarity() {
        let p = pool_of(&[vec![1.0, 2.0]]);
        assert_eq!(pool_similarity(&p, 0, 4).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_raises_similarity() {
        let base = vec![vec![1.0, 0.2], vec![0.1, 1.0], vec![0.7, 0.7]];
        let before = mean_cosine_to_others(&pool_of(&base).inputs(), &[0, 1, 2], 2).unwrap()[0];
        let mut dup = base.clone();
        dup.push(base[0].clone());
        let after = mean_cosine_to_others(&pool_of(&dup).inputs(), &[0, 1, 2, 3], 2).unwrap()[0];
        assert!(after >= before);
    }

    #[test]
    fn select_top_tie_breaks_by_id() {
        let mut p = pool_of(&[vec![1.0], vec![2.0], vec![3.0]]);
        let q = select_top(&mut p, &[score(0.2), score(0.9), score(0.9)], 1).unwrap();
        assert_eq!(q[0].sample.id, 1);
        assert_eq!(p.ids(), vec![0, 2]);
        assert_eq!(p.oracle_calls(), 1);
    }

    #[test]
    fn select_top_drains_small_pool() {
        let mut p = pool_of(&[vec![1.0], vec![2.0]]);
        let q = select_top(&mut p, &[score(0.1), score(0.5)], 256).unwrap();
        assert!(p.is_empty());
        assert_eq!(
            q.iter().map(|x| x.sample.id).collect::<Vec<_>>(),
            vec![1, 0]
        );
        assert!(select_top(&mut p, &[], 1).is_err());
    }

    #[test]
    fn nan_scores_rank_last() {
        let mut p = pool_of(&[vec![1.0], vec![2.0]]);
        let q = select_top(&mut p, &[score(f64::NAN), score(-5.0)], 1).unwrap();
        assert_eq!(q[0].sample.id, 1);
    }

    proptest! {
        #[test]
        fn similarity_bounds(rows in prop::collection::vec(prop::collection::vec(0.01f32..1.0, 4), 2..12)) {
            let p = pool_of(&rows);
            for b in mean_cosine_to_others(&p.inputs(), &p.ids(), 3).unwrap() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&b));
            }
        }

        #[test]
        fn signed_similarity_bounds(rows in prop::collection::vec(prop::collection::vec(-1f32..1.0, 3), 2..10)) {
            prop_assume!(rows.iter().all(|r| r.iter().any(|&v| v != 0.0)));
            let p = pool_of(&rows);
            for b in mean_cosine_to_others(&p.inputs(), &p.ids(), 2).unwrap() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&b));
            }
        }

        #[test]
        fn selection_partitions_pool(gammas in prop::collection::vec(-3f64..3.0, 1..40), b in 1usize..50) {
            let rows: Vec<Vec<f32>> = (0..gammas.len()).map(|i| vec![i as f32 + 1.0]).collect();
            let mut p = pool_of(&rows);
            let scores: Vec<QueryScore> = gammas.iter().map(|&g| score(g)).collect();
            let q = select_top(&mut p, &scores, b).unwrap();
            prop_assert_eq!(q.len(), b.min(gammas.len()));
            prop_assert_eq!(q.len() + p.len(), gammas.len());
            let mut all: Vec<u64> = q.iter().map(|x| x.sample.id).chain(p.ids()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..gammas.len() as u64).collect::<Vec<_>>());
            prop_assert!(q.windows(2).all(|w| w[0].score.unwrap().gamma_q >= w[1].score.unwrap().gamma_q));
        }
    }
}
