use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};

use bowl::engine::{assemble, build_network, evaluate, run_variant, RunData, RunReport, Variant};
use bowl::io::write_text_atomic;
use bowl::metrics::{auroc, fmt_num, mean_std};
use bowl::nn::Network;
use bowl::ood::{batch_ood_score, predictive_entropy};
use bowl::stream::{corrupt, load_dataset, save_dataset, Corruption, Dataset};
use bowl::Tensor;

use crate::config::{DataSection, RunConfig, Split};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files (exit 2).
    Config(anyhow::Error),
    /// The run itself failed (exit 1).
    Run(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Run(e) => write!(f, "run failed: {e:#}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn config_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Config(e.into())
}

fn run_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Run(e.into())
}

/// Resolved output directory: explicit flag or env var, then the config.
pub fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> CliResult<PathBuf> {
    flag.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
        config_err(anyhow!(
            "no output directory: pass --output, set BOWL_OUTPUT_DIR or output_dir"
        ))
    })
}

/// Data and a fresh network for `cfg`.
pub fn prepare(cfg: &RunConfig) -> CliResult<(RunData, Network)> {
    match cfg.scenario().map_err(config_err)? {
        Some(sc) => {
            let data = sc.build().map_err(config_err)?;
            let net = sc.network().map_err(config_err)?;
            Ok((data, net))
        }
        None => {
            let DataSection::File {
                train,
                test,
                foreign,
            } = &cfg.data
            else {
                unreachable!("scenario() is None only for file data")
            };
            let load =
                |p: &Path| load_dataset(p).with_context(|| format!("loading {}", p.display()));
            let train = load(train).map_err(config_err)?;
            let test = load(test).map_err(config_err)?;
            let foreign = foreign
                .as_deref()
                .map(load)
                .transpose()
                .map_err(config_err)?;
            let mix = cfg
                .mix
                .as_ref()
                .map(|m| m.spec())
                .transpose()
                .map_err(config_err)?;
            if mix.is_some_and(|m| m.foreign_fraction > 0.0) && foreign.is_none() {
                return Err(config_err(anyhow!(
                    "mix.foreign_fraction > 0 needs data.foreign"
                )));
            }
            let data = assemble(
                &train,
                test,
                foreign.as_ref(),
                cfg.tasks.classes_per_task,
                cfg.ood.batch_size,
                mix.as_ref(),
                cfg.seed,
            )
            .map_err(config_err)?;
            let net = build_network(
                train.features(),
                &cfg.network.hidden,
                &cfg.network.batch_norm,
                &data.schedule,
                cfg.seed,
            )
            .map_err(config_err)?;
            Ok((data, net))
        }
    }
}

fn write_report(dir: &Path, report: &RunReport) -> anyhow::Result<()> {
    write_text_atomic(&dir.join("report.csv"), &report.steps_csv())?;
    write_text_atomic(&dir.join("timesteps.csv"), &report.timesteps_csv())?;
    write_text_atomic(
        &dir.join("buffer_composition.csv"),
        &report.composition_csv(),
    )?;
    write_text_atomic(&dir.join("ood_decisions.csv"), &report.ood_csv())?;
    write_text_atomic(&dir.join("metrics.csv"), &report.curves_csv())?;
    write_text_atomic(&dir.join("summary.txt"), &report.summary())?;
    Ok(())
}

/// One run of `variant` into `dir`. On failure the partial report is still
/// written, without a checkpoint.
pub fn execute(cfg: &RunConfig, variant: Variant, dir: &Path) -> CliResult<RunReport> {
    let (data, mut net) = prepare(cfg)?;
    let loop_cfg = cfg.loop_config().map_err(config_err)?;
    for w in loop_cfg.warnings() {
        eprintln!("warning: {w}");
    }
    write_text_atomic(&dir.join("config.toml"), &cfg.to_toml()).map_err(run_err)?;
    match run_variant(&mut net, &loop_cfg, &data, variant) {
        Ok(report) => {
            write_report(dir, &report).map_err(run_err)?;
            net.save(&dir.join("model.bnt")).map_err(run_err)?;
            Ok(report)
        }
        Err(failure) => {
            write_report(dir, &failure.partial).map_err(run_err)?;
            Err(run_err(failure))
        }
    }
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let variant = cfg.variant().map_err(config_err)?;
    let report = execute(cfg, variant, out)?;
    print!("{}", report.summary());
    Ok(())
}

/// Runs every configured variant and seed, then writes `ablation.csv` with
/// per-timestep accuracy mean and std and the #ODP mean and std.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let variants: Vec<Variant> = cfg
        .ablate
        .variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<_, _>>()
        .map_err(config_err)?;
    let seeds = &cfg.ablate.seeds;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let workers = match cfg.ablate.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<RunReport>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(variant, seed)) = jobs.get(i) else {
                    break;
                };
                let run_cfg = RunConfig {
                    seed,
                    variant: variant.name().into(),
                    ..cfg.clone()
                };
                let dir = out.join(variant.name()).join(format!("seed{seed}"));
                let r = execute(&run_cfg, variant, &dir);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut reports = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("workers joined") {
        reports.push(r.expect("every job ran")?);
    }
    let table = ablation_table(&variants, seeds.len(), &reports);
    write_text_atomic(&out.join("ablation.csv"), &table).map_err(run_err)?;
    print!("{table}");
    Ok(())
}

/// `reports` holds `seeds` consecutive runs per variant.
pub fn ablation_table(variants: &[Variant], seeds: usize, reports: &[RunReport]) -> String {
    let horizon = reports
        .iter()
        .map(|r| r.timesteps.len())
        .max()
        .unwrap_or(1)
        .saturating_sub(1);
    let mut s = String::from("variant,seeds");
    for t in 1..=horizon {
        let _ = write!(s, ",t{t}_mean,t{t}_std");
    }
    s.push_str(",odp_mean,odp_std\n");
    for (v, runs) in variants.iter().zip(reports.chunks(seeds)) {
        let _ = write!(s, "{},{}", v.name(), runs.len());
        for t in 1..=horizon {
            let acc: Vec<f64> = runs
                .iter()
                .map(|r| r.timesteps.get(t).map_or(f64::NAN, |x| x.accuracy))
                .collect();
            let (m, sd) = mean_std(&acc);
            let _ = write!(s, ",{},{}", fmt_num(m), fmt_num(sd));
        }
        let odp: Vec<f64> = runs.iter().map(|r| r.odp() as f64).collect();
        let (m, sd) = mean_std(&odp);
        let _ = writeln!(s, ",{},{}", fmt_num(m), fmt_num(sd));
    }
    s
}

/// Per-batch scores for consecutive `batch`-sized chunks of `set`.
fn batch_scores(net: &Network, set: &Dataset, batch: usize) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for start in (0..set.len()).step_by(batch) {
        let rows: Vec<&[f32]> = (start..(start + batch).min(set.len()))
            .map(|i| set.inputs.row(i))
            .collect();
        let x = Tensor::from_rows(&rows)?;
        let eta1 = batch_ood_score(net, &x)?.eta1;
        let (logits, _) = net.infer(&x, false)?;
        out.push((eta1, predictive_entropy(&logits)));
    }
    Ok(out)
}

/// Writes `ood_hist.csv` (one row per batch) and `ood_summary.txt`.
pub fn cmd_ood_hist(
    cfg: &RunConfig,
    checkpoint: &Path,
    in_set: &Path,
    out_set: &Path,
    out: &Path,
) -> CliResult<()> {
    for (what, p) in [("in-set", in_set), ("out-set", out_set)] {
        if p.as_os_str().is_empty() {
            return Err(config_err(anyhow!("{what} path is empty")));
        }
    }
    let net = Network::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
        .map_err(config_err)?;
    let load = |p: &Path| load_dataset(p).with_context(|| format!("loading {}", p.display()));
    let ins = load(in_set).map_err(config_err)?;
    let outs = load(out_set).map_err(config_err)?;
    if ins.is_empty() || outs.is_empty() {
        return Err(config_err(anyhow!(
            "in-set and out-set must both be nonempty"
        )));
    }
    let b = cfg.ood.batch_size;
    let si = batch_scores(&net, &ins, b).map_err(run_err)?;
    let so = batch_scores(&net, &outs, b).map_err(run_err)?;
    let mut csv = String::from("source,eta1,predictive_entropy\n");
    for (src, rows) in [("in", &si), ("out", &so)] {
        for (e, h) in rows.iter() {
            let _ = writeln!(csv, "{src},{},{}", fmt_num(*e), fmt_num(*h));
        }
    }
    let col = |v: &[(f64, f64)], k: usize| -> Vec<f64> {
        v.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect()
    };
    let a_eta = auroc(&col(&si, 0), &col(&so, 0), true).map_err(run_err)?;
    let a_pe = auroc(&col(&si, 1), &col(&so, 1), true).map_err(run_err)?;
    let summary = format!(
        "in_batches = {}\nout_batches = {}\nbatch_size = {b}\nauroc_eta1 = {}\nauroc_predictive_entropy = {}\n",
        si.len(),
        so.len(),
        fmt_num(a_eta),
        fmt_num(a_pe)
    );
    write_text_atomic(&out.join("ood_hist.csv"), &csv).map_err(run_err)?;
    write_text_atomic(&out.join("ood_summary.txt"), &summary).map_err(run_err)?;
    print!("{summary}");
    Ok(())
}

/// Accuracy of a checkpoint on `data` (default: the config's test set) over
/// the classes its head knows.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>) -> CliResult<f64> {
    let net = Network::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
        .map_err(config_err)?;
    let test = match data {
        Some(p) => load_dataset(p)
            .with_context(|| format!("loading {}", p.display()))
            .map_err(config_err)?,
        None => match &cfg.data {
            DataSection::File { test, .. } => load_dataset(test).map_err(config_err)?,
            section => section
                .spec(cfg.seed, Split::Test)
                .and_then(|s| Ok(s.generate()?))
                .map_err(config_err)?,
        },
    };
    let acc = evaluate(&net, &test, net.classes()).map_err(run_err)?;
    println!("accuracy = {}", fmt_num(acc));
    Ok(acc)
}

/// Generates one split of `section` with `seed`, optionally corrupted, and
/// writes it to `path`.
pub fn cmd_gen_data(
    section: &DataSection,
    seed: u64,
    split: Split,
    corruption: Option<Corruption>,
    path: &Path,
) -> CliResult<Dataset> {
    if matches!(section, DataSection::File { .. }) {
        return Err(config_err(anyhow!("gen-data needs a generator kind")));
    }
    let mut set = section
        .spec(seed, split)
        .and_then(|s| Ok(s.generate()?))
        .map_err(config_err)?;
    if let Some(c) = corruption {
        let values = corrupt(
            set.inputs.data(),
            c,
            bowl::rng::derive_seed(seed, "gen-data"),
        )
        .map_err(config_err)?;
        set.inputs = Tensor::new(set.inputs.dims().to_vec(), values).map_err(run_err)?;
    }
    save_dataset(&set, path).map_err(run_err)?;
    println!("wrote {} samples to {}", set.len(), path.display());
    Ok(set)
}
