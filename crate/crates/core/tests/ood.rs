use bowl::memory::{MemoryBuffer, MemoryEntry};
use bowl::metrics::auroc;
use bowl::nn::{train_epoch, SgdOptimizer};
use bowl::ood::{
    batch_ood_score, bootstrap_scores, bootstrap_threshold, bootstrap_threshold_from,
    filter_stream, ScoreForm, ThresholdConfig,
};
use bowl::query::CandidatePool;
use bowl::rng;
use bowl::stream::{
    corrupt, synth_generate, Corruption, CorruptionKind, Dataset, Origin, Sample, SynthSpec,
};
use bowl::{Mode, Network, Tensor};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn trained_blobs(seed: u64) -> (Network, Dataset, Dataset) {
    let spec = |n, name| SynthSpec::new(4, 16, 0.5, 0.1, n, rng::derive_seed(seed, name));
    let train = synth_generate(&spec(1200, "train")).unwrap();
    let test = synth_generate(&spec(800, "test")).unwrap();
    let mut r = rng::stream(seed, "net");
    let mut net = Network::mlp(16, &[32, 32], &[0, 1, 2, 3], &mut r).unwrap();
    let mut opt = SgdOptimizer::new(0.05, 0.9, 5e-4);
    let samples = train.samples(0);
    for _ in 0..10 {
        train_epoch(&mut net, &samples, &mut opt, 32, &mut r).unwrap();
    }
    net.set_mode(Mode::Eval);
    (net, train, test)
}

fn rows(d: &Dataset) -> Vec<&[f32]> {
    (0..d.len()).map(|i| d.inputs.row(i)).collect()
}

fn batches_of(d: &Dataset, b: usize, origin: Origin) -> Vec<Vec<Sample>> {
    d.samples(0)
        .into_iter()
        .map(|s| Sample { origin, ..s })
        .collect::<Vec<_>>()
        .chunks(b)
        .map(<[Sample]>::to_vec)
        .collect()
}

#[test]
fn gaussian_noise_batches_separate_from_clean_ones() {
    let (net, train, test) = trained_blobs(0);
    let all = train.inputs.data();
    let mean = all.iter().map(|&v| v as f64).sum::<f64>() / all.len() as f64;
    let std =
        (all.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    let noise = Normal::new(mean, 3.0 * std).unwrap();
    let mut r = rng::stream(0, "noise");
    let score = |t: Tensor<f32>| batch_ood_score(&net, &t).unwrap().eta1;
    let clean: Vec<f64> = test
        .inputs
        .data()
        .chunks(16 * 8)
        .map(|c| score(Tensor::new(vec![8, 16], c.to_vec()).unwrap()))
        .collect();
    let junk: Vec<f64> = (0..clean.len())
        .map(|_| {
            score(
                Tensor::new(
                    vec![8, 16],
                    (0..128).map(|_| noise.sample(&mut r) as f32).collect(),
                )
                .unwrap(),
            )
        })
        .collect();
    assert!(auroc(&clean, &junk, true).unwrap() >= 0.9);
}

fn clean_tau(net: &Network, train: &Dataset, seed: u64) -> f64 {
    let mut r = rng::stream(seed, "tau");
    bootstrap_threshold_from(
        net,
        &rows(train),
        &ThresholdConfig::default(),
        ScoreForm::Eta1,
        &mut r,
    )
    .unwrap()
    .tau
}

fn batch_scores(net: &Network, data: &[f32], dims: usize) -> Vec<f64> {
    data.chunks(dims * 8)
        .map(|c| {
            batch_ood_score(net, &Tensor::new(vec![8, dims], c.to_vec()).unwrap())
                .unwrap()
                .eta1
        })
        .collect()
}

#[test]
fn clean_threshold_rejects_gaussian_noise() {
    let (net, train, _) = trained_blobs(7);
    let tau = clean_tau(&net, &train, 7);
    let all = train.inputs.data();
    let mean = all.iter().map(|&v| v as f64).sum::<f64>() / all.len() as f64;
    let std =
        (all.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    let noise = Normal::new(mean, 3.0 * std).unwrap();
    let mut r = rng::stream(7, "noise");
    let junk: Vec<f32> = (0..200 * 128)
        .map(|_| noise.sample(&mut r) as f32)
        .collect();
    let scores = batch_scores(&net, &junk, 16);
    let rejected = scores.iter().filter(|&&s| s >= tau).count();
    assert!(rejected as f64 >= 0.95 * scores.len() as f64, "{rejected}");
}

#[test]
fn corrupted_test_batches_exceed_the_clean_threshold() {
    let (net, train, test) = trained_blobs(8);
    let tau = clean_tau(&net, &train, 8);
    let c = Corruption::new(CorruptionKind::Gaussian, 0.5).unwrap();
    let noisy = corrupt(test.inputs.data(), c, 8).unwrap();
    let scores = batch_scores(&net, &noisy, 16);
    let above = scores.iter().filter(|&&s| s >= tau).count();
    assert!(above as f64 >= 0.9 * scores.len() as f64, "{above}");
}

#[test]
fn scoring_leaves_the_network_untouched() {
    let (net, train, test) = trained_blobs(1);
    let before = net.to_tensors();
    let mut r = rng::stream(1, "tau");
    let th = bootstrap_threshold_from(
        &net,
        &rows(&train),
        &ThresholdConfig::default(),
        ScoreForm::Eta1,
        &mut r,
    )
    .unwrap();
    let mut pool = CandidatePool::new();
    filter_stream(
        &net,
        batches_of(&test, 8, Origin::Clean),
        th.tau,
        ScoreForm::Eta1,
        &mut pool,
        1,
    )
    .unwrap();
    assert_eq!(net.to_tensors(), before);
}

#[test]
fn both_score_forms_accept_the_same_batches() {
    let (net, train, test) = trained_blobs(2);
    let cfg = ThresholdConfig::default();
    let decisions = |form| {
        // Same bootstrap draws for both forms.
        let mut r = rng::stream(2, "tau");
        let tau = bootstrap_threshold_from(&net, &rows(&train), &cfg, form, &mut r)
            .unwrap()
            .tau;
        let mut pool = CandidatePool::new();
        let out = filter_stream(
            &net,
            batches_of(&test, 8, Origin::Clean),
            tau,
            form,
            &mut pool,
            1,
        )
        .unwrap();
        out.decisions.iter().map(|d| d.accepted).collect::<Vec<_>>()
    };
    assert_eq!(
        decisions(ScoreForm::Eta1),
        decisions(ScoreForm::HalfLogOdds)
    );
}

#[test]
fn filter_partitions_batches_and_keeps_order() {
    let (net, train, test) = trained_blobs(3);
    let mut r = rng::stream(3, "tau");
    let tau = bootstrap_threshold_from(
        &net,
        &rows(&train),
        &ThresholdConfig::default(),
        ScoreForm::Eta1,
        &mut r,
    )
    .unwrap()
    .tau;
    let batches = batches_of(&test, 8, Origin::Clean);
    let mut pool = CandidatePool::new();
    let out = filter_stream(&net, batches.clone(), tau, ScoreForm::Eta1, &mut pool, 1).unwrap();
    assert_eq!(out.accepted_batches + out.rejected_batches, batches.len());
    assert_eq!(out.accepted_samples + out.rejected_samples, test.len());
    let expected: Vec<u64> = batches
        .iter()
        .zip(&out.decisions)
        .filter(|(_, d)| d.accepted)
        .flat_map(|(b, _)| b.iter().map(|s| s.id))
        .collect();
    assert_eq!(pool.ids(), expected);

    let mut none = CandidatePool::new();
    let out = filter_stream(
        &net,
        batches.clone(),
        f64::NEG_INFINITY,
        ScoreForm::Eta1,
        &mut none,
        1,
    )
    .unwrap();
    assert_eq!(out.accepted_batches, 0);
    assert!(none.is_empty());
    let mut all = CandidatePool::new();
    filter_stream(&net, batches, f64::INFINITY, ScoreForm::Eta1, &mut all, 1).unwrap();
    assert_eq!(all.len(), test.len());
}

#[test]
fn repeated_point_buffer_gives_its_own_score() {
    let (net, train, _) = trained_blobs(4);
    let x = train.inputs.row(0).to_vec();
    let single = batch_ood_score(&net, &Tensor::new(vec![1, 16], x.clone()).unwrap()).unwrap();
    let batch = batch_ood_score(&net, &Tensor::new(vec![8, 16], x.repeat(8)).unwrap()).unwrap();
    assert!((single.eta1 - batch.eta1).abs() < 1e-9 * single.eta1.abs().max(1.0));
    let entries = (0..20)
        .map(|id| MemoryEntry {
            id,
            input: x.clone(),
            label: 0,
            entropy: 0.0,
            inserted_at: 0,
            origin: Origin::Clean,
        })
        .collect();
    let buffer = MemoryBuffer::from_entries(entries, 20).unwrap();
    for alpha in [0.5, 0.9, 0.99] {
        let cfg = ThresholdConfig {
            alpha,
            ..ThresholdConfig::default()
        };
        let tau = bootstrap_threshold(&net, &buffer, &cfg, &mut rng::stream(4, "tau"))
            .unwrap()
            .tau;
        assert!((tau - batch.eta1).abs() < 1e-9 * tau.abs().max(1.0));
    }
}

#[test]
fn too_small_buffer_is_an_error() {
    let (net, train, _) = trained_blobs(5);
    let reference = &rows(&train)[..7];
    let r = bootstrap_scores(
        &net,
        reference,
        &ThresholdConfig::default(),
        ScoreForm::Eta1,
        &mut rng::stream(5, "x"),
    );
    assert!(matches!(
        r,
        Err(bowl::Error::BufferTooSmall { have: 7, need: 8 })
    ));
}

#[test]
fn scaled_activations_score_higher() {
    let (net, _, test) = trained_blobs(6);
    let batch: Vec<f32> = test.inputs.data()[..16 * 8].to_vec();
    let base = batch_ood_score(&net, &Tensor::new(vec![8, 16], batch.clone()).unwrap()).unwrap();
    let scaled = batch_ood_score(
        &net,
        &Tensor::new(vec![8, 16], batch.iter().map(|v| v * 10.0).collect()).unwrap(),
    )
    .unwrap();
    assert!(scaled.eta0 > base.eta0);
    assert!(scaled.eta1 > base.eta1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_score_is_permutation_invariant(seed in 0u64..500, shift in 0usize..8) {
        let mut r = rng::stream(seed, "net");
        let net: Network = Network::mlp(4, &[6, 5], &[0, 1], &mut r).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f32> = (0..32).map(|_| normal.sample(&mut r)).collect();
        let mut rotated = data.clone();
        rotated.rotate_left(4 * shift);
        let a = batch_ood_score(&net, &Tensor::new(vec![8, 4], data).unwrap()).unwrap();
        let b = batch_ood_score(&net, &Tensor::new(vec![8, 4], rotated).unwrap()).unwrap();
        prop_assert!((a.eta0 - b.eta0).abs() <= 1e-9 * a.eta0.max(1.0));
        prop_assert_eq!(a.d, 11);
    }
}
