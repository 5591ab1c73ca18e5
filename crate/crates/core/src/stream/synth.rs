use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

use super::Dataset;

/// Gaussian-blob classification data.
///
/// Class means sit on a regular simplex around `center` with pairwise distance
/// `separation`; samples add isotropic noise of standard deviation `std`.
/// Labels are assigned round-robin, so class counts differ by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub dims: usize,
    pub separation: f32,
    pub std: f32,
    pub n: usize,
    pub seed: u64,
    pub center: f32,
    /// First class id; classes are `label_offset..label_offset + n_classes`.
    pub label_offset: u32,
}

impl SynthSpec {
    pub fn new(
        n_classes: usize,
        dims: usize,
        separation: f32,
        std: f32,
        n: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_classes,
            dims,
            separation,
            std,
            n,
            seed,
            center: 0.5,
            label_offset: 0,
        }
    }

    /// Class means, `[n_classes][dims]`.
    pub fn class_means(&self) -> Vec<Vec<f32>> {
        let c = self.n_classes;
        let sep = self.separation as f64;
        (0..c)
            .map(|k| {
                let mut m = vec![0f64; self.dims];
                if self.dims >= c {
                    // Scaled simplex corners e_k - centroid; corners are sqrt(2) apart.
                    let s = sep / 2f64.sqrt();
                    for (j, v) in m.iter_mut().enumerate().take(c) {
                        *v = s * (if j == k { 1.0 } else { 0.0 } - 1.0 / c as f64);
                    }
                } else if self.dims >= 2 {
                    // Regular polygon with edge length `sep`.
                    let radius = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                    m[0] = radius * angle.cos();
                    m[1] = radius * angle.sin();
                } else {
                    m[0] = sep * (k as f64 - (c as f64 - 1.0) / 2.0);
                }
                m.into_iter()
                    .map(|v| (v + self.center as f64) as f32)
                    .collect()
            })
            .collect()
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::Empty("synthetic dataset with N = 0"));
    }
    if spec.n_classes == 0 || spec.dims == 0 {
        return Err(Error::InvalidArgument(
            "need at least one class and one dimension".into(),
        ));
    }
    if spec.separation.is_nan() || spec.separation <= 0.0 || spec.std.is_nan() || spec.std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "separation {} must be > 0 and std {} >= 0",
            spec.separation, spec.std
        )));
    }
    let means = spec.class_means();
    let mut r = rng::stream(spec.seed, "synth");
    let noise =
        Normal::new(0.0f64, spec.std as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.n * spec.dims);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = i % spec.n_classes;
        labels.push(spec.label_offset + k as u32);
        data.extend(
            means[k]
                .iter()
                .map(|&m| (m as f64 + noise.sample(&mut r)) as f32),
        );
    }
    shuffled_dataset(data, labels, spec.dims, &mut r)
}

/// Shuffles sample order so class ids are not a function of position.
pub(super) fn shuffled_dataset(
    data: Vec<f32>,
    labels: Vec<u32>,
    dims: usize,
    r: &mut rng::Rng,
) -> Result<Dataset> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    let mut shuffled = Vec::with_capacity(data.len());
    for &i in &order {
        shuffled.extend_from_slice(&data[i * dims..(i + 1) * dims]);
    }
    let labels = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(Tensor::new(vec![n, dims], shuffled)?, labels)
}

/// Stand-in outlier source for `base`: the same number of blob classes, with
/// means pushed out to ten times the base separation and shifted off the
/// base center, drawn from an independent seed.
pub fn foreign_spec(base: &SynthSpec, n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        separation: base.separation * 10.0,
        n,
        seed,
        center: base.center + base.separation * 10.0 / (base.n_classes as f32).sqrt(),
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn means_are_equidistant() {
        for (c, dims) in [(4, 8), (5, 2), (3, 1), (2, 2)] {
            let m = SynthSpec::new(c, dims, 0.6, 0.1, 10, 0).class_means();
            for i in 0..c {
                for j in 0..i {
                    let d = dist(&m[i], &m[j]);
                    if dims >= 2 {
                        if dims >= c || j + 1 == i || (i == c - 1 && j == 0) {
                            assert!((d - 0.6).abs() < 1e-5, "c={c} dims={dims} d={d}");
                        }
                    } else {
                        assert!(d >= 0.6 - 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_balanced_and_deterministic() {
        let spec = SynthSpec::new(3, 4, 0.5, 0.1, 100, 9);
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        let counts: Vec<usize> = (0..3)
            .map(|k| a.labels.iter().filter(|&&l| l == k).count())
            .collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            synth_generate(&SynthSpec::new(2, 2, 1.0, 0.1, 0, 1)),
            Err(Error::Empty(_))
        ));
        assert!(synth_generate(&SynthSpec::new(2, 2, 0.0, 0.1, 5, 1)).is_err());
    }
}
