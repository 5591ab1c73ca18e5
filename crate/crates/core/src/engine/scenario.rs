use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng;
use crate::stream::{
    make_split_tasks, mix_streams, DataSpec, Dataset, IdAllocator, MixSpec, MixtureSpec,
    TaskSchedule,
};

use super::RunData;

/// Synthetic class-incremental setup: generated data split into tasks of
/// `classes_per_task` classes, optionally mixed with corrupted and foreign
/// batches after timestep 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Training data; its sample count is the training-set size.
    pub data: DataSpec,
    pub test_n: usize,
    pub classes_per_task: usize,
    /// Stream batch size b, the unit of OoD decisions.
    pub batch_size: usize,
    pub mix: Option<MixSpec>,
    pub foreign_n: usize,
    pub hidden: Vec<usize>,
    /// Batch norm after each hidden layer; empty means everywhere.
    pub batch_norm: Vec<bool>,
    pub seed: u64,
}

impl Scenario {
    /// Eight mixture classes in four two-class tasks, stream batches of 8.
    pub fn toy(seed: u64) -> Self {
        Self {
            data: DataSpec::Mixture(MixtureSpec {
                n_classes: 8,
                dims: 32,
                latent_dims: 6,
                modes_per_class: 4,
                spread: 0.2,
                std: 0.02,
                n: 3000,
                seed: rng::derive_seed(seed, "train-data"),
                structure_seed: rng::derive_seed(seed, "structure"),
                center: 0.5,
                label_offset: 0,
            }),
            test_n: 1000,
            classes_per_task: 2,
            batch_size: 8,
            mix: None,
            foreign_n: 2000,
            hidden: vec![32, 32],
            batch_norm: Vec::new(),
            seed,
        }
    }

    pub fn schedule(&self) -> Result<TaskSchedule> {
        TaskSchedule::split(&self.data.classes(), self.classes_per_task)
    }

    pub fn build(&self) -> Result<RunData> {
        let train = self.data.generate()?;
        let test = self
            .data
            .resampled(self.test_n, rng::derive_seed(self.seed, "test-data"))
            .generate()?;
        let foreign = match &self.mix {
            Some(_) => Some(
                self.data
                    .foreign(
                        self.foreign_n.max(1),
                        rng::derive_seed(self.seed, "foreign"),
                    )
                    .generate()?,
            ),
            None => None,
        };
        assemble(
            &train,
            test,
            foreign.as_ref(),
            self.classes_per_task,
            self.batch_size,
            self.mix.as_ref(),
            self.seed,
        )
    }

    /// Freshly initialized network whose head covers the first task.
    pub fn network(&self) -> Result<Network> {
        let schedule = self.schedule()?;
        build_network(
            self.data.dims(),
            &self.hidden,
            &self.batch_norm,
            &schedule,
            self.seed,
        )
    }
}

/// Splits `train` into class-incremental streams over its sorted classes and
/// mixes corrupted and `foreign` batches into every stream after the first.
pub fn assemble(
    train: &Dataset,
    test: Dataset,
    foreign: Option<&Dataset>,
    classes_per_task: usize,
    batch_size: usize,
    mix: Option<&MixSpec>,
    seed: u64,
) -> Result<RunData> {
    let schedule = TaskSchedule::split(&train.classes(), classes_per_task)?;
    if test.features() != train.features() {
        return Err(Error::Shape(format!(
            "test set has {} features, training set {}",
            test.features(),
            train.features()
        )));
    }
    let mut streams = make_split_tasks(
        train,
        &schedule,
        batch_size,
        0,
        rng::derive_seed(seed, "split"),
    )?;
    if let Some(mix) = mix {
        let empty = Dataset::new(
            crate::Tensor::new(vec![0, train.features()], Vec::new())?,
            Vec::new(),
        )?;
        let foreign = foreign.unwrap_or(&empty);
        if foreign.features() != train.features() {
            return Err(Error::Shape(format!(
                "foreign set has {} features, training set {}",
                foreign.features(),
                train.features()
            )));
        }
        let mut ids = IdAllocator::new(train.len() as u64);
        let mix_seed = rng::derive_seed(seed, "mix");
        for s in streams.iter_mut().skip(1) {
            *s = mix_streams(s, mix, foreign, &mut ids, mix_seed)?;
        }
    }
    Ok(RunData {
        schedule,
        streams,
        test,
    })
}

/// MLP for `input_dim` features with its head on the first task's classes.
pub fn build_network(
    input_dim: usize,
    hidden: &[usize],
    batch_norm: &[bool],
    schedule: &TaskSchedule,
    seed: u64,
) -> Result<Network> {
    let mut r = rng::stream(seed, "init");
    let bn = if batch_norm.is_empty() {
        vec![true; hidden.len()]
    } else {
        batch_norm.to_vec()
    };
    Network::mlp_with_bn(input_dim, hidden, &bn, &schedule.tasks()[0], &mut r)
}
