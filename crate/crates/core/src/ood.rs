//! Batch-level out-of-distribution scoring against batch-norm statistics.
//!
//! Every batch-norm layer carries a running mean and variance of its inputs,
//! i.e. a diagonal Gaussian reference for the intermediate values it sees.
//! `eta0` is the squared Mahalanobis distance of a sample's intermediate
//! values from those references, summed over layers. `eta1 = eta0 - d ln eta0`
//! is large both for unusually large and unusually small activations, with its
//! minimum at `eta0 = d`. Stream batches whose `eta1` falls below a bootstrap
//! threshold are admitted to the candidate pool.

use rand::Rng;

use crate::error::{Error, Result};
use crate::memory::MemoryBuffer;
use crate::nn::{softmax_rows, ActivationTrace, Network};
use crate::query::CandidatePool;
use crate::stream::{Origin, Sample};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodScore {
    pub eta0: f64,
    pub eta1: f64,
    /// Batch-norm scalars per sample.
    pub d: usize,
}

/// Per-sample sum of squared standardized activations over all batch-norm
/// layers.
pub fn eta0_per_sample(trace: &ActivationTrace) -> Vec<f64> {
    (0..trace.samples())
        .map(|i| {
            (0..trace.layers().len())
                .map(|l| trace.standardized(l, i).iter().map(|z| z * z).sum::<f64>())
                .sum()
        })
        .collect()
}

/// `eta0 - d ln eta0`; `eta0 = 0` maps to `+inf`.
pub fn eta1_from_eta0(eta0: f64, d: usize) -> f64 {
    if eta0 <= 0.0 {
        return f64::INFINITY;
    }
    eta0 - d as f64 * eta0.ln()
}

/// Which monotone transform of `eta0` a threshold is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreForm {
    /// `eta0 - d ln eta0`.
    #[default]
    Eta1,
    /// Posterior log-odds form `eta0 / 2 - (d / 2) ln eta0`, constants dropped.
    HalfLogOdds,
}

impl ScoreForm {
    pub fn apply(self, eta0: f64, d: usize) -> f64 {
        match self {
            ScoreForm::Eta1 => eta1_from_eta0(eta0, d),
            ScoreForm::HalfLogOdds => {
                if eta0 <= 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * eta0 - 0.5 * d as f64 * eta0.ln()
                }
            }
        }
    }
}

/// Mean per-sample `eta0` of `inputs` under the eval-mode network.
fn batch_eta0<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<(f64, usize)> {
    if batch.is_empty() || batch.rows() == 0 {
        return Err(Error::Empty("OoD batch"));
    }
    let (_, trace) = net.infer(batch, true)?;
    let trace = trace.expect("capture requested");
    let per_sample = eta0_per_sample(&trace);
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((mean, trace.total_dim()))
}

/// Scores a whole batch: the mean of per-sample `eta0`, then `eta1` once.
pub fn batch_ood_score<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<OodScore> {
    let (eta0, d) = batch_eta0(net, batch)?;
    Ok(OodScore {
        eta0,
        eta1: eta1_from_eta0(eta0, d),
        d,
    })
}

fn rows_score(net: &Network, rows: &[&[f32]], form: ScoreForm) -> Result<f64> {
    let (eta0, d) = batch_eta0(net, &Tensor::from_rows(rows)?)?;
    Ok(form.apply(eta0, d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    /// Number of bootstrap sets.
    pub k_bootstrap: usize,
    /// Samples per bootstrap set; matches the stream's OoD batch size.
    pub bootstrap_size: usize,
    /// Quantile of the bootstrap score distribution used as threshold.
    pub alpha: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            k_bootstrap: 100,
            bootstrap_size: 8,
            alpha: 0.99,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_bootstrap == 0 || self.bootstrap_size == 0 {
            return Err(Error::InvalidArgument(
                "bootstrap K and size must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodThreshold {
    pub tau: f64,
    pub config: ThresholdConfig,
}

/// Empirical quantile as an order statistic: the `ceil(alpha * n)`-th smallest
/// score. For `n = 100, alpha = 0.99` this is the second largest.
pub fn quantile(scores: &[f64], alpha: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Guard against alpha * n landing a hair above an integer.
    let rank = ((alpha * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Scores of `k_bootstrap` sets resampled with replacement from `reference`.
pub fn bootstrap_scores<R: Rng + ?Sized>(
    net: &Network,
    reference: &[&[f32]],
    config: &ThresholdConfig,
    form: ScoreForm,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    if reference.len() < config.bootstrap_size {
        return Err(Error::BufferTooSmall {
            have: reference.len(),
            need: config.bootstrap_size,
        });
    }
    (0..config.k_bootstrap)
        .map(|_| {
            let rows: Vec<&[f32]> = (0..config.bootstrap_size)
                .map(|_| reference[rng.random_range(0..reference.len())])
                .collect();
            rows_score(net, &rows, form)
        })
        .collect()
}

/// Bootstrap threshold over an arbitrary reference set.
pub fn bootstrap_threshold_from<R: Rng + ?Sized>(
    net: &Network,
    reference: &[&[f32]],
    config: &ThresholdConfig,
    form: ScoreForm,
    rng: &mut R,
) -> Result<OodThreshold> {
    let scores = bootstrap_scores(net, reference, config, form, rng)?;
    Ok(OodThreshold {
        tau: quantile(&scores, config.alpha),
        config: *config,
    })
}

/// Threshold `tau` from bootstrap sets drawn out of the memory buffer.
pub fn bootstrap_threshold<R: Rng + ?Sized>(
    net: &Network,
    buffer: &MemoryBuffer,
    config: &ThresholdConfig,
    rng: &mut R,
) -> Result<OodThreshold> {
    let reference: Vec<&[f32]> = buffer
        .entries()
        .iter()
        .map(|e| e.input.as_slice())
        .collect();
    bootstrap_threshold_from(net, &reference, config, ScoreForm::Eta1, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDecision {
    pub origin: Origin,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub accepted_batches: usize,
    pub rejected_batches: usize,
    pub accepted_samples: usize,
    pub rejected_samples: usize,
    pub decisions: Vec<BatchDecision>,
}

/// Admits each stream batch to `pool` iff its score is strictly below `tau`.
/// Accepted samples keep their stream order.
pub fn filter_stream<I>(
    net: &Network,
    batches: I,
    tau: f64,
    form: ScoreForm,
    pool: &mut CandidatePool,
    timestep: usize,
) -> Result<FilterOutcome>
where
    I: IntoIterator<Item = Vec<Sample>>,
{
    if tau.is_nan() {
        return Err(Error::InvalidArgument("threshold is NaN".into()));
    }
    let mut out = FilterOutcome::default();
    for batch in batches {
        if batch.is_empty() {
            continue;
        }
        let rows: Vec<&[f32]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let score = rows_score(net, &rows, form)?;
        let accepted = score < tau;
        out.decisions.push(BatchDecision {
            origin: batch[0].origin,
            score,
            accepted,
        });
        if accepted {
            out.accepted_batches += 1;
            out.accepted_samples += batch.len();
            for s in batch {
                pool.push(s, timestep)?;
            }
        } else {
            out.rejected_batches += 1;
            out.rejected_samples += batch.len();
        }
    }
    Ok(out)
}

/// Mean softmax entropy over the rows of `logits`.
pub fn predictive_entropy<T: Scalar>(logits: &Tensor<T>) -> f64 {
    let rows = softmax_rows(logits);
    if rows.is_empty() {
        return 0.0;
    }
    let total: f64 = rows
        .iter()
        .map(|p| {
            -p.iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum::<f64>()
        })
        .sum();
    total / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::TraceLayer;

    fn trace_from_z(rows: &[Vec<f64>]) -> ActivationTrace {
        let width = rows[0].len();
        let flat: Vec<f64> = rows.concat();
        ActivationTrace::new(
            rows.len(),
            vec![TraceLayer {
                channels: width,
                spatial: 1,
                standardized: flat.clone(),
                activated: flat,
            }],
        )
        .unwrap()
    }

    #[test]
    fn eta0_is_sum_of_squares() {
        let t = trace_from_z(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]]);
        assert_eq!(eta0_per_sample(&t), vec![5.25, 0.0]);
    }

    #[test]
    fn eta1_reference_values() {
        assert_eq!(eta1_from_eta0(1.0, 1), 1.0);
        let expect = 4.0 - 4.0 * 4f64.ln();
        assert!((eta1_from_eta0(4.0, 4) - expect).abs() < 1e-12);
        assert!((expect - (-1.5452)).abs() < 1e-4);
        assert!(eta1_from_eta0(0.4, 4) > eta1_from_eta0(4.0, 4));
        assert!(eta1_from_eta0(40.0, 4) > eta1_from_eta0(4.0, 4));
        assert_eq!(eta1_from_eta0(0.0, 4), f64::INFINITY);
    }

    #[test]
    fn eta1_decreases_then_increases_around_d() {
        for d in [1usize, 3, 16, 200] {
            let grid: Vec<f64> = (1..4000).map(|k| k as f64 * d as f64 / 1000.0).collect();
            for w in grid.windows(2) {
                let (a, b) = (eta1_from_eta0(w[0], d), eta1_from_eta0(w[1], d));
                if w[1] <= d as f64 {
                    assert!(b < a, "d={d}: not decreasing at {}", w[0]);
                } else if w[0] >= d as f64 {
                    assert!(b > a, "d={d}: not increasing at {}", w[0]);
                }
            }
        }
    }

    #[test]
    fn quantile_order_statistics() {
        let scores: Vec<f64> = (0..100).rev().map(|v| v as f64).collect();
        assert_eq!(quantile(&scores, 0.99), 98.0);
        assert_eq!(quantile(&scores, 0.5), 49.0);
        assert_eq!(quantile(&[3.0; 7], 0.3), 3.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.01), 1.0);
    }

    #[test]
    fn predictive_entropy_bounds() {
        let uniform = Tensor::new(vec![2, 10], vec![0.7f32; 20]).unwrap();
        assert!((predictive_entropy(&uniform) - 10f64.ln()).abs() < 1e-9);
        let mut onehot = vec![-1e4f32; 10];
        onehot[3] = 1e4;
        let peaked = Tensor::new(vec![1, 10], onehot).unwrap();
        assert!(predictive_entropy(&peaked) < 1e-9);
    }

    proptest! {
        #[test]
        fn predictive_entropy_in_range(vals in prop::collection::vec(-30f32..30.0, 12)) {
            let t = Tensor::new(vec![3, 4], vals).unwrap();
            let h = predictive_entropy(&t);
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
        }

        #[test]
        fn eta0_nonnegative_and_zero_only_at_origin(z in prop::collection::vec(-5f64..5.0, 1..20)) {
            let e = eta0_per_sample(&trace_from_z(std::slice::from_ref(&z)))[0];
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e == 0.0, z.iter().all(|&v| v == 0.0));
        }
    }
}
