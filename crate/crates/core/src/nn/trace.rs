use crate::error::{Error, Result};

/// Activations recorded at one batch-norm layer for a batch of samples.
///
/// Both buffers are `[sample, channel, spatial]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLayer {
    pub channels: usize,
    pub spatial: usize,
    /// `(x - running_mean) / sqrt(running_var + eps)`.
    pub standardized: Vec<f64>,
    /// `gamma * standardized + beta`.
    pub activated: Vec<f64>,
}

impl TraceLayer {
    pub fn width(&self) -> usize {
        self.channels * self.spatial
    }
}

/// Per-layer batch-norm activations captured during an eval-mode forward pass,
/// one [`TraceLayer`] per batch-norm layer in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    samples: usize,
    layers: Vec<TraceLayer>,
}

impl ActivationTrace {
    pub fn new(samples: usize, layers: Vec<TraceLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("activation trace has no layers"));
        }
        for l in &layers {
            let want = samples * l.width();
            if l.standardized.len() != want || l.activated.len() != want {
                return Err(Error::Shape(format!(
                    "trace layer of width {} for {samples} samples",
                    l.width()
                )));
            }
        }
        Ok(Self { samples, layers })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn layers(&self) -> &[TraceLayer] {
        &self.layers
    }

    /// Scalar entries per sample summed over all layers.
    pub fn total_dim(&self) -> usize {
        self.layers.iter().map(TraceLayer::width).sum()
    }

    pub fn standardized(&self, layer: usize, sample: usize) -> &[f64] {
        let l = &self.layers[layer];
        &l.standardized[sample * l.width()..(sample + 1) * l.width()]
    }

    pub fn activated(&self, layer: usize, sample: usize) -> &[f64] {
        let l = &self.layers[layer];
        &l.activated[sample * l.width()..(sample + 1) * l.width()]
    }

    /// Concatenates traces of consecutive batches.
    pub fn concat(parts: Vec<ActivationTrace>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut acc = it.next().ok_or(Error::Empty("no traces to concatenate"))?;
        for part in it {
            if part.layers.len() != acc.layers.len() {
                return Err(Error::Shape("traces from different architectures".into()));
            }
            for (a, b) in acc.layers.iter_mut().zip(part.layers) {
                if a.width() != b.width() {
                    return Err(Error::Shape("traces from different architectures".into()));
                }
                a.standardized.extend(b.standardized);
                a.activated.extend(b.activated);
            }
            acc.samples += part.samples;
        }
        Ok(acc)
    }
}
