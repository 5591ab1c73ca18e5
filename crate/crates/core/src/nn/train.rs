use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::memory::MemoryBuffer;
use crate::tensor::Tensor;

use super::{Mode, Network, SgdOptimizer};

/// Anything that can be fed to the classifier with a class label.
pub trait LabeledInput {
    fn input(&self) -> &[f32];
    fn label(&self) -> u32;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub steps: usize,
    /// Mean of the per-step losses, each taken before its update.
    pub mean_loss: f64,
}

/// One shuffled pass over the memory buffer. This is the only entry point the
/// open-world loop uses for training.
pub fn train_one_epoch<R: Rng + ?Sized>(
    net: &mut Network,
    buffer: &MemoryBuffer,
    opt: &mut SgdOptimizer,
    minibatch_size: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    if buffer.is_empty() {
        return Err(Error::Empty("memory buffer"));
    }
    train_epoch(net, buffer.entries(), opt, minibatch_size, rng)
}

/// One shuffled pass over `data` in minibatches; returns the number of
/// optimizer steps, `ceil(len / minibatch_size)`, and the mean loss.
pub fn train_epoch<S: LabeledInput, R: Rng + ?Sized>(
    net: &mut Network,
    data: &[S],
    opt: &mut SgdOptimizer,
    minibatch_size: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if minibatch_size == 0 {
        return Err(Error::InvalidArgument("minibatch size 0".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let previous = net.mode();
    net.set_mode(Mode::Train);
    let mut steps = 0;
    let mut loss_sum = 0.0;
    let result = order.chunks(minibatch_size).try_for_each(|chunk| {
        let rows: Vec<&[f32]> = chunk.iter().map(|&i| data[i].input()).collect();
        let targets = chunk
            .iter()
            .map(|&i| {
                let label = data[i].label();
                net.class_position(label).ok_or_else(|| {
                    Error::InvalidArgument(format!("label {label} has no head output"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        loss_sum += net.backward_and_step(&Tensor::from_rows(&rows)?, &targets, opt)?;
        steps += 1;
        Ok(())
    });
    net.set_mode(previous);
    result.map(|_| EpochStats {
        steps,
        mean_loss: loss_sum / steps as f64,
    })
}
