//! Datasets, class-incremental task streams, corruption and outlier mixing.

mod corrupt;
mod dataset;
mod mixture;
mod spec;
mod synth;
mod tasks;

pub use corrupt::{corrupt, corrupt_in_place, Corruption, CorruptionKind};
pub use dataset::{load_dataset, save_dataset, Dataset};
pub use mixture::{mixture_generate, MixtureSpec};
pub use spec::DataSpec;
pub use synth::{foreign_spec, synth_generate, SynthSpec};
pub use tasks::{make_split_tasks, mix_streams, IdAllocator, MixSpec, TaskSchedule, TaskStream};

/// Ground-truth marker for foreign samples; never counted in accuracy.
pub const SENTINEL_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Clean,
    Corrupted(CorruptionKind),
    Foreign,
}

impl Origin {
    pub fn name(&self) -> &'static str {
        match self {
            Origin::Clean => "clean",
            Origin::Corrupted(_) => "corrupted",
            Origin::Foreign => "foreign",
        }
    }
}

/// One stream item. `label` is what the labelling oracle answers when the
/// sample is queried; for foreign samples that answer is meaningless and the
/// ground truth is [`SENTINEL_LABEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub input: Vec<f32>,
    pub label: u32,
    pub origin: Origin,
}

impl Sample {
    pub fn ground_truth(&self) -> u32 {
        match self.origin {
            Origin::Foreign => SENTINEL_LABEL,
            _ => self.label,
        }
    }
}

impl crate::nn::LabeledInput for Sample {
    fn input(&self) -> &[f32] {
        &self.input
    }

    fn label(&self) -> u32 {
        self.label
    }
}
