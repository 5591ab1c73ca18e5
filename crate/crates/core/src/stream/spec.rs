use crate::error::Result;

use super::{foreign_spec, mixture_generate, synth_generate, Dataset, MixtureSpec, SynthSpec};

/// Either synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Blobs(SynthSpec),
    Mixture(MixtureSpec),
}

impl DataSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match self {
            DataSpec::Blobs(s) => synth_generate(s),
            DataSpec::Mixture(s) => mixture_generate(s),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            DataSpec::Blobs(s) => s.n_classes,
            DataSpec::Mixture(s) => s.n_classes,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            DataSpec::Blobs(s) => s.dims,
            DataSpec::Mixture(s) => s.dims,
        }
    }

    pub fn label_offset(&self) -> u32 {
        match self {
            DataSpec::Blobs(s) => s.label_offset,
            DataSpec::Mixture(s) => s.label_offset,
        }
    }

    pub fn classes(&self) -> Vec<u32> {
        (0..self.n_classes() as u32)
            .map(|c| c + self.label_offset())
            .collect()
    }

    /// Same classes, different sample count and sampling seed.
    pub fn resampled(&self, n: usize, seed: u64) -> Self {
        match self {
            DataSpec::Blobs(s) => DataSpec::Blobs(SynthSpec {
                n,
                seed,
                ..s.clone()
            }),
            DataSpec::Mixture(s) => DataSpec::Mixture(MixtureSpec {
                n,
                seed,
                ..s.clone()
            }),
        }
    }

    /// Outlier source matched to this dataset.
    pub fn foreign(&self, n: usize, seed: u64) -> Self {
        match self {
            DataSpec::Blobs(s) => DataSpec::Blobs(foreign_spec(s, n, seed)),
            DataSpec::Mixture(s) => DataSpec::Mixture(s.foreign(n, seed)),
        }
    }
}
