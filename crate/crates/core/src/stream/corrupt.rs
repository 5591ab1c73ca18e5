use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    Gaussian,
    Shot,
    Impulse,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::Gaussian,
        CorruptionKind::Shot,
        CorruptionKind::Impulse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::Shot => "shot",
            CorruptionKind::Impulse => "impulse",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: f64,
}

impl Corruption {
    pub fn new(kind: CorruptionKind, severity: f64) -> Result<Self> {
        let c = Self { kind, severity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.severity.is_finite() || self.severity <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "severity must be > 0, got {}",
                self.severity
            )));
        }
        if self.kind == CorruptionKind::Impulse && self.severity > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "impulse severity is a probability, got {}",
                self.severity
            )));
        }
        Ok(())
    }

    /// Photon budget for shot noise at this severity.
    pub fn shot_rate(&self) -> f64 {
        60.0 / self.severity
    }
}

/// Corrupts `values` in place. Inputs are expected in `[0, 1]`; outputs are
/// clamped to that range.
pub fn corrupt_in_place<R: Rng + ?Sized>(
    values: &mut [f32],
    c: Corruption,
    rng: &mut R,
) -> Result<()> {
    c.validate()?;
    match c.kind {
        CorruptionKind::Gaussian => {
            let noise =
                Normal::new(0.0, c.severity).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for v in values.iter_mut() {
                *v = (*v as f64 + noise.sample(rng)).clamp(0.0, 1.0) as f32;
            }
        }
        CorruptionKind::Shot => {
            let lambda = c.shot_rate();
            for v in values.iter_mut() {
                let rate = (*v as f64).clamp(0.0, 1.0) * lambda;
                *v = if rate > 0.0 {
                    let p =
                        Poisson::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    (p.sample(rng) / lambda).clamp(0.0, 1.0) as f32
                } else {
                    0.0
                };
            }
        }
        CorruptionKind::Impulse => {
            let half = c.severity / 2.0;
            for v in values.iter_mut() {
                let u: f64 = rng.random();
                if u < half {
                    *v = 0.0;
                } else if u < c.severity {
                    *v = 1.0;
                } else {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(())
}

pub fn corrupt(inputs: &[f32], c: Corruption, seed: u64) -> Result<Vec<f32>> {
    let mut out = inputs.to_vec();
    let mut r = rng::stream(seed, c.kind.name());
    corrupt_in_place(&mut out, c, &mut r)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f32> {
        (0..n).map(|i| i as f32 / (n - 1) as f32).collect()
    }

    #[test]
    fn vanishing_gaussian_is_identity() {
        let x = grid(50);
        let y = corrupt(
            &x,
            Corruption::new(CorruptionKind::Gaussian, 1e-9).unwrap(),
            3,
        )
        .unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn full_impulse_is_binary() {
        let y = corrupt(
            &grid(200),
            Corruption::new(CorruptionKind::Impulse, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        assert!(ones > 60 && ones < 140);
    }

    #[test]
    fn shot_keeps_black_pixels_black() {
        let y = corrupt(
            &[0.0, 0.0, 1.0],
            Corruption::new(CorruptionKind::Shot, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(&y[..2], &[0.0, 0.0]);
    }

    #[test]
    fn shot_is_unbiased_on_average() {
        let x = vec![0.4f32; 20_000];
        let y = corrupt(&x, Corruption::new(CorruptionKind::Shot, 1.0).unwrap(), 2).unwrap();
        let mean = y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
        // Poisson(24)/60 has sd 0.0816; the mean of 2e4 draws is within 0.003.
        assert!((mean - 0.4).abs() < 0.003, "{mean}");
    }

    #[test]
    fn bad_severity() {
        assert!(Corruption::new(CorruptionKind::Gaussian, 0.0).is_err());
        assert!(Corruption::new(CorruptionKind::Shot, -1.0).is_err());
        assert!(Corruption::new(CorruptionKind::Impulse, 1.5).is_err());
        assert_eq!(
            "shot".parse::<CorruptionKind>().unwrap(),
            CorruptionKind::Shot
        );
        assert!("fog".parse::<CorruptionKind>().is_err());
    }

    proptest! {
        #[test]
        fn shape_and_range_preserved(
            x in proptest::collection::vec(0f32..=1.0, 1..64),
            kind in 0usize..3,
            sev in 0.01f64..1.0,
            seed in any::<u64>(),
        ) {
            let c = Corruption::new(CorruptionKind::ALL[kind], sev).unwrap();
            let y = corrupt(&x, c, seed).unwrap();
            prop_assert_eq!(y.len(), x.len());
            prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(&y, &corrupt(&x, c, seed).unwrap());
        }
    }
}
