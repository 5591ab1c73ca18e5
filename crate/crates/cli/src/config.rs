//! Run configuration: a TOML file, optionally patched by `--set key=value`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use bowl::engine::{LoopConfig, Scenario, Variant};
use bowl::ood::ThresholdConfig;
use bowl::rng;
use bowl::stream::{Corruption, CorruptionKind, DataSpec, MixSpec, MixtureSpec, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub tasks: TasksSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default, rename = "loop")]
    pub loop_: LoopSection,
    #[serde(default)]
    pub ood: OodSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixSection>,
    #[serde(default)]
    pub ablate: AblateSection,
}

fn default_variant() -> String {
    Variant::Full.name().into()
}

/// Where the training, test and foreign data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Mixture {
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_dims")]
        dims: usize,
        #[serde(default = "d_latent")]
        latent_dims: usize,
        #[serde(default = "d_modes")]
        modes_per_class: usize,
        #[serde(default = "d_spread")]
        spread: f32,
        #[serde(default = "d_mix_std")]
        std: f32,
        #[serde(default = "d_train")]
        train_samples: usize,
        #[serde(default = "d_test")]
        test_samples: usize,
        #[serde(default = "d_foreign")]
        foreign_samples: usize,
    },
    Blobs {
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_dims")]
        dims: usize,
        #[serde(default = "d_separation")]
        separation: f32,
        #[serde(default = "d_blob_std")]
        std: f32,
        #[serde(default = "d_train")]
        train_samples: usize,
        #[serde(default = "d_test")]
        test_samples: usize,
        #[serde(default = "d_foreign")]
        foreign_samples: usize,
    },
    /// Datasets in the BNT1 container format.
    File {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        foreign: Option<PathBuf>,
    },
}

fn d_classes() -> usize {
    8
}
fn d_dims() -> usize {
    32
}
fn d_latent() -> usize {
    6
}
fn d_modes() -> usize {
    4
}
fn d_spread() -> f32 {
    0.2
}
fn d_mix_std() -> f32 {
    0.02
}
fn d_separation() -> f32 {
    0.5
}
fn d_blob_std() -> f32 {
    0.1
}
fn d_train() -> usize {
    3000
}
fn d_test() -> usize {
    1000
}
fn d_foreign() -> usize {
    2000
}

impl DataSection {
    /// Generator for one split. `Train`, `Test` and `Foreign` use the seeds a
    /// run derives from `seed`, so `gen-data` reproduces a run's data.
    pub fn spec(&self, seed: u64, split: Split) -> anyhow::Result<DataSpec> {
        let base = match *self {
            DataSection::Mixture {
                classes,
                dims,
                latent_dims,
                modes_per_class,
                spread,
                std,
                train_samples,
                ..
            } => DataSpec::Mixture(MixtureSpec {
                n_classes: classes,
                dims,
                latent_dims,
                modes_per_class,
                spread,
                std,
                n: train_samples,
                seed: rng::derive_seed(seed, "train-data"),
                structure_seed: rng::derive_seed(seed, "structure"),
                center: 0.5,
                label_offset: 0,
            }),
            DataSection::Blobs {
                classes,
                dims,
                separation,
                std,
                train_samples,
                ..
            } => DataSpec::Blobs(SynthSpec::new(
                classes,
                dims,
                separation,
                std,
                train_samples,
                rng::derive_seed(seed, "train-data"),
            )),
            DataSection::File { .. } => bail!("file data has no generator"),
        };
        let (test_n, foreign_n) = self.sizes();
        Ok(match split {
            Split::Train => base,
            Split::Test => base.resampled(test_n, rng::derive_seed(seed, "test-data")),
            Split::Foreign => base.foreign(foreign_n.max(1), rng::derive_seed(seed, "foreign")),
        })
    }

    fn sizes(&self) -> (usize, usize) {
        match *self {
            DataSection::Mixture {
                test_samples,
                foreign_samples,
                ..
            }
            | DataSection::Blobs {
                test_samples,
                foreign_samples,
                ..
            } => (test_samples, foreign_samples),
            DataSection::File { .. } => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Foreign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    pub classes_per_task: usize,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            classes_per_task: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    /// Batch norm after each hidden layer; empty means after all of them.
    #[serde(default)]
    pub batch_norm: Vec<bool>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            batch_norm: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub acquisition_batch: usize,
    pub buffer_capacity: usize,
    pub epochs_per_update: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub minibatch: usize,
    pub pretrain_epochs: usize,
    pub baseline_epochs: usize,
    pub chunk_size: usize,
    pub use_ood: bool,
    pub use_active_query: bool,
    pub use_cl: bool,
    pub eval_every_update: bool,
}

impl Default for LoopSection {
    fn default() -> Self {
        let c = LoopConfig::default();
        Self {
            acquisition_batch: c.acquisition_batch,
            buffer_capacity: c.buffer_capacity,
            epochs_per_update: c.epochs_per_update,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            minibatch: c.minibatch,
            pretrain_epochs: c.pretrain_epochs,
            baseline_epochs: c.baseline_epochs,
            chunk_size: c.chunk_size,
            use_ood: c.use_ood,
            use_active_query: c.use_active_query,
            use_cl: c.use_cl,
            eval_every_update: c.eval_every_update,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    /// Stream batch size b; also the bootstrap set size.
    pub batch_size: usize,
    pub k_bootstrap: usize,
    pub alpha: f64,
}

impl Default for OodSection {
    fn default() -> Self {
        let t = ThresholdConfig::default();
        Self {
            batch_size: t.bootstrap_size,
            k_bootstrap: t.k_bootstrap,
            alpha: t.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    #[serde(default = "d_corruption")]
    pub corruption: String,
    #[serde(default = "d_severity")]
    pub severity: f64,
    #[serde(default = "d_fraction")]
    pub corrupted_fraction: f64,
    #[serde(default = "d_fraction")]
    pub foreign_fraction: f64,
}

fn d_corruption() -> String {
    CorruptionKind::Gaussian.name().into()
}
fn d_severity() -> f64 {
    0.5
}
fn d_fraction() -> f64 {
    0.25
}

impl MixSection {
    pub fn spec(&self) -> anyhow::Result<MixSpec> {
        let kind: CorruptionKind = self.corruption.parse()?;
        let spec = MixSpec {
            corruption: Corruption::new(kind, self.severity)?,
            corrupted_fraction: self.corrupted_fraction,
            foreign_fraction: self.foreign_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
    /// Concurrent runs; 0 picks the available parallelism.
    pub jobs: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ABLATIONS
                .iter()
                .map(|v| v.name().to_string())
                .collect(),
            jobs: 0,
        }
    }
}

impl RunConfig {
    /// Reads `path` and applies `key.path=value` overrides before
    /// deserializing, so overrides go through the same validation.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.variant()?;
        self.loop_config()?.validate()?;
        for v in &self.ablate.variants {
            v.parse::<Variant>()?;
        }
        if self.ablate.seeds.is_empty() || self.ablate.variants.is_empty() {
            bail!("ablate.seeds and ablate.variants must not be empty");
        }
        if self.tasks.classes_per_task == 0 {
            bail!("tasks.classes_per_task must be at least 1");
        }
        if self.network.hidden.is_empty() {
            bail!("network.hidden needs at least one layer");
        }
        if !self.network.batch_norm.is_empty() {
            if self.network.batch_norm.len() != self.network.hidden.len() {
                bail!("network.batch_norm needs one flag per hidden layer");
            }
            if !self.network.batch_norm.iter().any(|&b| b) {
                bail!("network.batch_norm must enable at least one layer");
            }
        }
        if let Some(mix) = &self.mix {
            mix.spec()?;
        }
        Ok(())
    }

    pub fn variant(&self) -> anyhow::Result<Variant> {
        Ok(self.variant.parse()?)
    }

    pub fn loop_config(&self) -> anyhow::Result<LoopConfig> {
        let l = &self.loop_;
        let c = LoopConfig {
            acquisition_batch: l.acquisition_batch,
            buffer_capacity: l.buffer_capacity,
            epochs_per_update: l.epochs_per_update,
            threshold: ThresholdConfig {
                k_bootstrap: self.ood.k_bootstrap,
                bootstrap_size: self.ood.batch_size,
                alpha: self.ood.alpha,
            },
            learning_rate: l.learning_rate,
            momentum: l.momentum,
            weight_decay: l.weight_decay,
            minibatch: l.minibatch,
            pretrain_epochs: l.pretrain_epochs,
            baseline_epochs: l.baseline_epochs,
            chunk_size: l.chunk_size,
            use_ood: l.use_ood,
            use_active_query: l.use_active_query,
            use_cl: l.use_cl,
            eval_every_update: l.eval_every_update,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    /// Generated-data scenario; `None` for file data.
    pub fn scenario(&self) -> anyhow::Result<Option<Scenario>> {
        if matches!(self.data, DataSection::File { .. }) {
            return Ok(None);
        }
        Ok(Some(Scenario {
            data: self.data.spec(self.seed, Split::Train)?,
            test_n: self.data.sizes().0,
            classes_per_task: self.tasks.classes_per_task,
            batch_size: self.ood.batch_size,
            mix: self.mix.as_ref().map(|m| m.spec()).transpose()?,
            foreign_n: self.data.sizes().1,
            hidden: self.network.hidden.clone(),
            batch_norm: self.network.batch_norm.clone(),
            seed: self.seed,
        }))
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a section"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "seed = 3\n[data]\nkind = \"mixture\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MIN, &[]).unwrap();
        assert_eq!(c.variant, "full");
        assert_eq!(c.loop_.acquisition_batch, 256);
        assert_eq!(c.ood.batch_size, 8);
        assert!(c.mix.is_none());
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let c = RunConfig::parse(
            MIN,
            &[
                "loop.buffer_capacity=300".into(),
                "variant=no_ood".into(),
                "data.spread=0.3".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.loop_.buffer_capacity, 300);
        assert_eq!(c.variant, "no_ood");
        assert!(matches!(c.data, DataSection::Mixture { spread, .. } if spread == 0.3));
    }

    #[test]
    fn unknown_and_missing_keys_fail() {
        let e =
            RunConfig::parse("seed = 1\n[data]\nkind = \"mixture\"\nbogus = 1\n", &[]).unwrap_err();
        assert!(format!("{e:#}").contains("bogus"), "{e:#}");
        let e = RunConfig::parse(
            "seed = 1\n[loop]\nbuffer_capcity = 3\n[data]\nkind = \"blobs\"\n",
            &[],
        )
        .unwrap_err();
        assert!(format!("{e:#}").contains("buffer_capcity"), "{e:#}");
        let e = RunConfig::parse("[data]\nkind = \"blobs\"\n", &[]).unwrap_err();
        assert!(format!("{e:#}").contains("seed"), "{e:#}");
        assert!(RunConfig::parse(MIN, &["variant=nope".into()]).is_err());
        assert!(RunConfig::parse(MIN, &["loop.acquisition_batch=0".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::parse(MIN, &["mix.severity=0.3".into()]).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml(), &[]).unwrap(), c);
    }
}
