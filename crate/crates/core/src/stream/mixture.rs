use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

use super::synth::shuffled_dataset;
use super::Dataset;

/// Classes as unions of Gaussian sub-clusters.
///
/// All sub-cluster centers are drawn from one isotropic cloud in a
/// `latent_dims`-dimensional subspace of the input space, so every class is
/// made of the same kind of parts: an unseen class looks statistically like
/// the seen ones, while isotropic pixel noise leaves the subspace. The
/// subspace and the centers depend on `structure_seed` only; `seed` drives
/// sampling, so train and test sets drawn with different seeds share classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n_classes: usize,
    pub dims: usize,
    pub latent_dims: usize,
    pub modes_per_class: usize,
    /// Standard deviation of the sub-cluster centers along each latent axis.
    pub spread: f32,
    /// Within-cluster isotropic noise.
    pub std: f32,
    pub n: usize,
    pub seed: u64,
    pub structure_seed: u64,
    pub center: f32,
    pub label_offset: u32,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Empty("synthetic dataset with N = 0"));
        }
        if self.n_classes == 0 || self.modes_per_class == 0 || self.latent_dims == 0 {
            return Err(Error::InvalidArgument(
                "classes, modes and latent dims must be positive".into(),
            ));
        }
        if self.latent_dims > self.dims {
            return Err(Error::InvalidArgument(format!(
                "latent dims {} exceed input dims {}",
                self.latent_dims, self.dims
            )));
        }
        if self.spread.is_nan() || self.spread <= 0.0 || self.std.is_nan() || self.std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "spread {} must be > 0 and std {} >= 0",
                self.spread, self.std
            )));
        }
        Ok(())
    }

    /// Orthonormal `[latent_dims][dims]` basis of the shared subspace.
    pub fn basis(&self) -> Vec<Vec<f64>> {
        let mut r = rng::stream(self.structure_seed, "mixture/basis");
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.latent_dims);
        while basis.len() < self.latent_dims {
            let mut v: Vec<f64> = (0..self.dims)
                .map(|_| StandardNormal.sample(&mut r))
                .collect();
            // Gram-Schmidt against the accepted vectors.
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        basis
    }

    /// Sub-cluster centers, `[n_classes][modes_per_class][dims]`.
    pub fn centers(&self) -> Vec<Vec<Vec<f32>>> {
        let basis = self.basis();
        let mut r = rng::stream(self.structure_seed, "mixture/centers");
        let spread = Normal::new(0.0, self.spread as f64).expect("spread validated positive");
        (0..self.n_classes)
            .map(|_| {
                (0..self.modes_per_class)
                    .map(|_| {
                        let u: Vec<f64> = (0..self.latent_dims)
                            .map(|_| spread.sample(&mut r))
                            .collect();
                        (0..self.dims)
                            .map(|j| {
                                (self.center as f64
                                    + basis.iter().zip(&u).map(|(b, c)| b[j] * c).sum::<f64>())
                                    as f32
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl MixtureSpec {
    /// Stand-in outlier source: a fresh subspace and centers spread ten
    /// times wider, sampled with an independent seed.
    pub fn foreign(&self, n: usize, seed: u64) -> Self {
        Self {
            spread: self.spread * 10.0,
            n,
            seed,
            structure_seed: rng::derive_seed(self.structure_seed, "foreign"),
            ..self.clone()
        }
    }
}

/// Round-robin labels, uniformly chosen sub-cluster per sample, values
/// clamped to `[0, 1]`, shuffled order.
pub fn mixture_generate(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = spec.centers();
    let mut r = rng::stream(spec.seed, "mixture");
    let noise =
        Normal::new(0.0, spec.std as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.n * spec.dims);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = i % spec.n_classes;
        let mode = &centers[k][rand::Rng::random_range(&mut r, 0..spec.modes_per_class)];
        labels.push(spec.label_offset + k as u32);
        data.extend(
            mode.iter()
                .map(|&m| (m as f64 + noise.sample(&mut r)).clamp(0.0, 1.0) as f32),
        );
    }
    shuffled_dataset(data, labels, spec.dims, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MixtureSpec {
        MixtureSpec {
            n_classes: 3,
            dims: 10,
            latent_dims: 4,
            modes_per_class: 2,
            spread: 0.3,
            std: 0.05,
            n: 300,
            seed: 1,
            structure_seed: 2,
            center: 0.5,
            label_offset: 0,
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = spec().basis();
        for i in 0..b.len() {
            for j in 0..b.len() {
                let dot: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn structure_is_independent_of_sampling_seed() {
        let a = spec();
        let b = MixtureSpec { seed: 99, ..spec() };
        assert_eq!(a.centers(), b.centers());
        assert_ne!(mixture_generate(&a).unwrap(), mixture_generate(&b).unwrap());
        assert_eq!(mixture_generate(&a).unwrap(), mixture_generate(&a).unwrap());
    }

    #[test]
    fn noise_free_samples_lie_in_the_subspace() {
        let s = MixtureSpec { std: 0.0, ..spec() };
        let d = mixture_generate(&s).unwrap();
        let basis = s.basis();
        for i in 0..d.len() {
            let x: Vec<f64> = d.inputs.row(i).iter().map(|&v| v as f64 - 0.5).collect();
            let proj: f64 = basis
                .iter()
                .map(|b| b.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>().powi(2))
                .sum();
            let total: f64 = x.iter().map(|v| v * v).sum();
            assert!((total - proj).abs() < 1e-4 * total.max(1.0));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(mixture_generate(&MixtureSpec { n: 0, ..spec() }).is_err());
        assert!(mixture_generate(&MixtureSpec {
            latent_dims: 11,
            ..spec()
        })
        .is_err());
        assert!(mixture_generate(&MixtureSpec {
            spread: 0.0,
            ..spec()
        })
        .is_err());
    }
}
