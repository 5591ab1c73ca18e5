//! Minimal feed-forward network with batch normalization.

mod batchnorm;
mod dense;
mod loss;
mod network;
mod optim;
mod trace;
mod train;

pub use batchnorm::BatchNorm;
pub use dense::{Dense, Relu};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use network::{Layer, Network, ParamMut};
pub use optim::SgdOptimizer;
pub use trace::{ActivationTrace, TraceLayer};
pub use train::{train_epoch, train_one_epoch, EpochStats, LabeledInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
