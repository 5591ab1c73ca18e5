//! Batch normalization over the channel axis.
//!
//! Inputs are `[batch, channels, spatial...]`; statistics are kept per
//! channel and pooled over the batch and any spatial positions.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// EMA weight of the newest batch: `running <- (1 - m) running + m batch`.
    pub momentum: T,
    pub(crate) grad_gamma: Vec<T>,
    pub(crate) grad_beta: Vec<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    dims: Vec<usize>,
    z: Vec<T>,
    inv_std: Vec<T>,
    /// Whether normalization used batch statistics (true) or frozen running
    /// statistics (false); the two have different input gradients.
    batch_stats: bool,
}

/// `(batch, channels, spatial)` view of an input tensor.
fn layout(dims: &[usize]) -> Result<(usize, usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "batch norm input needs [batch, channels, ...], got {dims:?}"
        )));
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_config(channels, 1e-5, 0.1)
    }

    pub fn with_config(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(eps),
            momentum: T::of(momentum),
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (n, c, s) = layout(x.dims())?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        Ok((n, c, s))
    }

    /// Normalizes `x`. Train mode uses batch statistics and folds them into
    /// the running estimates; eval mode uses the running estimates and leaves
    /// the layer untouched.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => self.forward_batch(x),
        }
    }

    /// Eval-mode forward.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, s) = self.check(x)?;
        let inv_std = self.running_inv_std();
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (k / s) % c;
            let z = (*v - self.running_mean[ch]) * inv_std[ch];
            *v = self.gamma[ch] * z + self.beta[ch];
        }
        Ok(out)
    }

    /// Standardized values `(x - mean) / sqrt(var + eps)` under running
    /// statistics, alongside the post-affine output.
    pub(crate) fn infer_with_standardized(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, c, s) = self.check(x)?;
        let inv_std = self.running_inv_std();
        let mut z = x.clone();
        let mut out = x.clone();
        for (k, (zv, ov)) in z.data_mut().iter_mut().zip(out.data_mut()).enumerate() {
            let ch = (k / s) % c;
            *zv = (*zv - self.running_mean[ch]) * inv_std[ch];
            *ov = self.gamma[ch] * *zv + self.beta[ch];
        }
        Ok((z, out))
    }

    fn running_inv_std(&self) -> Vec<T> {
        self.running_var
            .iter()
            .map(|&v| T::one() / (v + self.eps).sqrt())
            .collect()
    }

    fn forward_batch(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, s) = self.check(x)?;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let m = (n * s) as f64;
        let data = x.data();
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        for (k, v) in data.iter().enumerate() {
            mean[(k / s) % c] += v.as_f64();
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for (k, v) in data.iter().enumerate() {
            let ch = (k / s) % c;
            let d = v.as_f64() - mean[ch];
            var[ch] += d * d;
        }
        var.iter_mut().for_each(|v| *v /= m);

        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::of(1.0 / (v + self.eps.as_f64()).sqrt()))
            .collect();
        let mut z = vec![T::zero(); data.len()];
        let mut out = x.clone();
        for (k, (zv, ov)) in z.iter_mut().zip(out.data_mut()).enumerate() {
            let ch = (k / s) % c;
            *zv = T::of(data[k].as_f64() - mean[ch]) * inv_std[ch];
            *ov = self.gamma[ch] * *zv + self.beta[ch];
        }

        // Running variance tracks the unbiased estimate.
        let unbias = m / (m - 1.0);
        let mom = self.momentum;
        for ch in 0..c {
            self.running_mean[ch] =
                (T::one() - mom) * self.running_mean[ch] + mom * T::of(mean[ch]);
            self.running_var[ch] =
                (T::one() - mom) * self.running_var[ch] + mom * T::of(var[ch] * unbias);
        }

        self.cache = Some(Cache {
            dims: x.dims().to_vec(),
            z,
            inv_std,
            batch_stats: true,
        });
        Ok(out)
    }

    /// Training forward that normalizes with the running statistics without
    /// updating them. Used when a minibatch holds a single sample.
    pub(crate) fn forward_frozen(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (z, out) = self.infer_with_standardized(x)?;
        self.cache = Some(Cache {
            dims: x.dims().to_vec(),
            z: z.into_data(),
            inv_std: self.running_inv_std(),
            batch_stats: false,
        });
        Ok(out)
    }

    pub(crate) fn cached_standardized(&self) -> Option<&[T]> {
        self.cache.as_ref().map(|c| c.z.as_slice())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("batch norm backward without forward".into()))?;
        if dy.dims() != cache.dims.as_slice() {
            return Err(Error::Shape("batch norm gradient shape".into()));
        }
        let (n, c, s) = layout(&cache.dims)?;
        let m = (n * s) as f64;
        let g = dy.data();
        let mut sum_dy = vec![0f64; c];
        let mut sum_dy_z = vec![0f64; c];
        for (k, (&gv, &zv)) in g.iter().zip(&cache.z).enumerate() {
            let ch = (k / s) % c;
            sum_dy[ch] += gv.as_f64();
            sum_dy_z[ch] += (gv * zv).as_f64();
        }
        for ch in 0..c {
            self.grad_gamma[ch] = T::of(sum_dy_z[ch]);
            self.grad_beta[ch] = T::of(sum_dy[ch]);
        }

        let mut dx = dy.clone();
        for (k, v) in dx.data_mut().iter_mut().enumerate() {
            let ch = (k / s) % c;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            *v = if cache.batch_stats {
                let centered = g[k].as_f64() * m - sum_dy[ch] - cache.z[k].as_f64() * sum_dy_z[ch];
                scale * T::of(centered / m)
            } else {
                scale * g[k]
            };
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng;

    fn channel_moments(t: &Tensor<f32>, c: usize) -> Vec<(f64, f64)> {
        let n = t.rows();
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = (0..n).map(|i| t.data()[i * c + ch] as f64).collect();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                (mean, var)
            })
            .collect()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut r = rng::stream(3, "bn");
        let data: Vec<f32> = (0..64 * 3)
            .map(|k| r.random_range(-2.0f32..5.0) * (1 + k % 3) as f32)
            .collect();
        let x = Tensor::new(vec![64, 3], data).unwrap();
        let mut bn = BatchNorm::<f32>::new(3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (mean, var) in channel_moments(&y, 3) {
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn eval_at_running_mean_returns_beta() {
        let mut bn = BatchNorm::<f32>::new(2);
        bn.running_mean = vec![0.3, -1.2];
        bn.running_var = vec![2.0, 0.5];
        bn.beta = vec![0.25, -0.75];
        bn.gamma = vec![3.0, 4.0];
        let x = Tensor::new(vec![1, 2], vec![0.3, -1.2]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.25, -0.75]);
    }

    #[test]
    fn eval_one_standard_deviation_above_mean() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean = vec![1.5];
        bn.running_var = vec![4.0];
        bn.gamma = vec![2.0];
        bn.beta = vec![1.0];
        let x_val = 1.5 + (4.0 + 1e-5f64).sqrt();
        let x = Tensor::new(vec![2, 1], vec![x_val, 1.5]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_leaves_state_untouched() {
        let mut bn = BatchNorm::<f32>::new(2);
        let before = (bn.running_mean.clone(), bn.running_var.clone());
        let x = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(before, (bn.running_mean.clone(), bn.running_var.clone()));
    }

    #[test]
    fn errors_on_channel_mismatch_and_tiny_batch() {
        let mut bn = BatchNorm::<f32>::new(3);
        let x = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Eval), Err(Error::Shape(_))));
        let one = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            bn.forward(&one, Mode::Train),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn spatial_statistics_pool_over_positions() {
        // [batch=2, channels=1, positions=2]: all four values share one channel.
        let x = Tensor::new(vec![2, 1, 2], vec![1.0f64, 3.0, 5.0, 7.0]).unwrap();
        let mut bn = BatchNorm::<f64>::with_config(1, 0.0, 1.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 4.0).abs() < 1e-12);
        // Unbiased variance of {1,3,5,7}.
        assert!((bn.running_var[0] - 20.0 / 3.0).abs() < 1e-12);
        let s = 5f64.sqrt();
        let expect = [-3.0 / s, -1.0 / s, 1.0 / s, 3.0 / s];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
