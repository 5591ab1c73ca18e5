//! Open-world continual learning driven by batch-norm statistics.
//!
//! A small batch-normalized network decides which stream batches look
//! in-distribution ([`ood`]), which accepted samples are worth labelling
//! ([`query`]) and which labelled samples to keep for replay ([`memory`]).
//! [`engine`] ties these into the full loop.

pub mod bnt;
pub mod engine;
pub mod error;
pub mod io;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod ood;
pub mod query;
pub mod rng;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use memory::{MemoryBuffer, MemoryEntry};
pub use nn::{Mode, Network};
pub use query::CandidatePool;
pub use stream::{Dataset, Origin, Sample};
pub use tensor::{Scalar, Tensor};
