use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bowl::stream::{Corruption, CorruptionKind};
use bowl_cli::commands::{self, CliError, CliResult};
use bowl_cli::config::{DataSection, RunConfig, Split};

#[derive(Parser)]
#[command(
    name = "bowl",
    version,
    about = "Open-world learning with batch-norm statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. `--set loop.buffer_capacity=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        RunConfig::load(&self.config, &overrides).map_err(CliError::Config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured variant once.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Shorthand for `--set variant=NAME`.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, env = "BOWL_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Run the ablation variants over the configured seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, env = "BOWL_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Score an in-set and an out-set with a checkpoint; export batch scores
    /// and AUROCs.
    OodHist {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in-set")]
        in_set: PathBuf,
        #[arg(long = "out-set")]
        out_set: PathBuf,
        #[arg(long, env = "BOWL_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
    /// Accuracy of a checkpoint on the config's test set or a dataset file.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mixture,
    Blobs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Foreign,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "mixture")]
    kind: Kind,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dims: usize,
    /// Sample count of the generated split.
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which of a run's datasets to reproduce.
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Mixture: latent dimensions.
    #[arg(long, default_value_t = 6)]
    latent_dims: usize,
    /// Mixture: sub-clusters per class.
    #[arg(long, default_value_t = 4)]
    modes: usize,
    /// Mixture: spread of sub-cluster centers.
    #[arg(long, default_value_t = 0.2)]
    spread: f32,
    /// Blobs: distance between class means.
    #[arg(long, default_value_t = 0.5)]
    separation: f32,
    /// Within-cluster noise; defaults to 0.02 (mixture) or 0.1 (blobs).
    #[arg(long)]
    std: Option<f32>,
    /// Corrupt the generated inputs: gaussian, shot or impulse.
    #[arg(long)]
    corruption: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    severity: f64,
    output: PathBuf,
}

impl GenDataArgs {
    fn section(&self) -> DataSection {
        let n = self.samples;
        match self.kind {
            Kind::Mixture => DataSection::Mixture {
                classes: self.classes,
                dims: self.dims,
                latent_dims: self.latent_dims,
                modes_per_class: self.modes,
                spread: self.spread,
                std: self.std.unwrap_or(0.02),
                train_samples: n,
                test_samples: n,
                foreign_samples: n,
            },
            Kind::Blobs => DataSection::Blobs {
                classes: self.classes,
                dims: self.dims,
                separation: self.separation,
                std: self.std.unwrap_or(0.1),
                train_samples: n,
                test_samples: n,
                foreign_samples: n,
            },
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            cfg,
            variant,
            output,
        } => {
            let mut args = cfg;
            if let Some(v) = variant {
                args.overrides.push(format!("variant=\"{v}\""));
            }
            let c = args.load()?;
            let out = commands::output_dir(&c, output)?;
            commands::cmd_run(&c, &out)
        }
        Command::Ablate { cfg, output } => {
            let c = cfg.load()?;
            let out = commands::output_dir(&c, output)?;
            commands::cmd_ablate(&c, &out)
        }
        Command::OodHist {
            cfg,
            checkpoint,
            in_set,
            out_set,
            output,
        } => {
            let c = cfg.load()?;
            let out = commands::output_dir(&c, output)?;
            commands::cmd_ood_hist(&c, &checkpoint, &in_set, &out_set, &out)
        }
        Command::GenData(a) => {
            let split = match a.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                SplitArg::Foreign => Split::Foreign,
            };
            let corruption = a
                .corruption
                .as_deref()
                .map(|k| -> anyhow::Result<Corruption> {
                    Ok(Corruption::new(k.parse::<CorruptionKind>()?, a.severity)?)
                })
                .transpose()
                .map_err(CliError::Config)?;
            commands::cmd_gen_data(&a.section(), a.seed, split, corruption, &a.output).map(|_| ())
        }
        Command::Eval {
            cfg,
            checkpoint,
            data,
        } => {
            let c = cfg.load()?;
            commands::cmd_eval(&c, &checkpoint, data.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bowl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
