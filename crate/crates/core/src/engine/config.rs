use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ood::ThresholdConfig;

/// Knobs of the open-world loop. Defaults follow the reference setup; the
/// toy presets in [`super::Scenario`] shrink the sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Samples queried from the pool per update (B).
    pub acquisition_batch: usize,
    /// Replay buffer capacity (|M|).
    pub buffer_capacity: usize,
    /// Buffer epochs after each buffer update. The loop description says 1;
    /// the reported experiments used 2.
    pub epochs_per_update: usize,
    /// Bootstrap parameters; `bootstrap_size` should equal the stream batch
    /// size b so that buffer sets and stream batches are scored alike.
    pub threshold: ThresholdConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// SGD minibatch size for every training call.
    pub minibatch: usize,
    /// Supervised epochs on the timestep-0 task.
    pub pretrain_epochs: usize,
    /// Epochs per timestep for the finetune and balanced-buffer baselines.
    pub baseline_epochs: usize,
    /// Row chunk for the pairwise cosine computations.
    pub chunk_size: usize,
    pub use_ood: bool,
    pub use_active_query: bool,
    pub use_cl: bool,
    /// Evaluate on the cumulative test set after every buffer update, not
    /// only at the end of each timestep.
    pub eval_every_update: bool,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            acquisition_batch: 256,
            buffer_capacity: 5000,
            epochs_per_update: 1,
            threshold: ThresholdConfig::default(),
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            minibatch: 256,
            pretrain_epochs: 120,
            baseline_epochs: 120,
            chunk_size: crate::query::DEFAULT_CHUNK,
            use_ood: true,
            use_active_query: true,
            use_cl: true,
            eval_every_update: true,
            seed: 0,
        }
    }
}

impl LoopConfig {
    /// Sizes scaled to the toy scenario: B = 32, |M| = 500, 30 epochs of
    /// pretraining and per baseline timestep.
    pub fn toy(seed: u64) -> Self {
        Self {
            acquisition_batch: 32,
            buffer_capacity: 500,
            minibatch: 32,
            pretrain_epochs: 30,
            baseline_epochs: 30,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("acquisition_batch", self.acquisition_batch),
            ("buffer_capacity", self.buffer_capacity),
            ("epochs_per_update", self.epochs_per_update),
            ("minibatch", self.minibatch),
            ("chunk_size", self.chunk_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        self.threshold.validate()
    }

    /// Non-fatal configuration smells.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.buffer_capacity < self.acquisition_batch {
            w.push(format!(
                "buffer capacity {} is smaller than the acquisition batch {}",
                self.buffer_capacity, self.acquisition_batch
            ));
        }
        w
    }

    /// This config with the switches of `variant` applied.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        match variant {
            Variant::NoOod => c.use_ood = false,
            Variant::RandomQuery => c.use_active_query = false,
            Variant::NoCl => c.use_cl = false,
            Variant::Full | Variant::Finetune | Variant::BalancedBuffer => {}
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoOod,
    RandomQuery,
    NoCl,
    Finetune,
    BalancedBuffer,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoOod,
        Variant::RandomQuery,
        Variant::NoCl,
        Variant::Finetune,
        Variant::BalancedBuffer,
    ];

    /// The module-ablation set.
    pub const ABLATIONS: [Variant; 4] = [
        Variant::Full,
        Variant::NoOod,
        Variant::RandomQuery,
        Variant::NoCl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoOod => "no_ood",
            Variant::RandomQuery => "random_query",
            Variant::NoCl => "no_cl",
            Variant::Finetune => "finetune",
            Variant::BalancedBuffer => "balanced_buffer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}
