use std::collections::{BTreeMap, HashMap};

use rand::seq::{index, IndexedRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::memory::{init_buffer, memory_scores, update_buffer, MemoryBuffer, MemoryEntry};
use crate::nn::{train_epoch, train_one_epoch, EpochStats, Network, SgdOptimizer};
use crate::ood::{bootstrap_threshold, filter_stream, ScoreForm};
use crate::query::{query_scores, select_top, CandidatePool, Queried};
use crate::rng;
use crate::stream::{Dataset, Sample, TaskSchedule, TaskStream, SENTINEL_LABEL};
use crate::tensor::Tensor;

use super::report::{CompositionSnapshot, StepRecord, TimestepRecord};
use super::{LoopConfig, RunReport, Variant};

/// Everything a run consumes: one stream per timestep (timestep 0 is the
/// pretraining task) and a test set covering every scheduled class.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub schedule: TaskSchedule,
    pub streams: Vec<TaskStream>,
    pub test: Dataset,
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<RunReport>,
}

/// Fraction of test samples in `classes` that `net` labels correctly.
/// Samples carrying the sentinel label are skipped.
pub fn evaluate(net: &Network, test: &Dataset, classes: &[u32]) -> Result<f64> {
    let rows: Vec<usize> = (0..test.len())
        .filter(|&i| test.labels[i] != SENTINEL_LABEL && classes.contains(&test.labels[i]))
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("test set for the classes seen so far"));
    }
    let mut correct = 0usize;
    for chunk in rows.chunks(1024) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|&i| test.inputs.row(i)).collect();
        let pred = net.predict(&Tensor::from_rows(&inputs)?)?;
        correct += chunk
            .iter()
            .zip(pred)
            .filter(|(i, p)| test.labels[**i] == *p)
            .count();
    }
    Ok(correct as f64 / rows.len() as f64)
}

pub fn run_bowl(
    net: &mut Network,
    config: &LoopConfig,
    data: &RunData,
) -> std::result::Result<RunReport, RunFailure> {
    run_variant(net, config, data, Variant::Full)
}

/// Pretrains on timestep 0, then runs `variant` over the remaining streams.
pub fn run_variant(
    net: &mut Network,
    config: &LoopConfig,
    data: &RunData,
    variant: Variant,
) -> std::result::Result<RunReport, RunFailure> {
    let config = config.for_variant(variant);
    let mut report = RunReport::new(variant.name(), config.seed);
    let result = Runner::new(net, &config, data, &mut report).and_then(|mut r| match variant {
        Variant::Finetune => r.finetune(),
        Variant::BalancedBuffer => r.balanced_buffer(),
        _ => r.open_world(),
    });
    match result {
        Ok(()) => Ok(report),
        Err(error) => Err(RunFailure {
            error,
            partial: Box::new(report),
        }),
    }
}

struct Runner<'a> {
    net: &'a mut Network,
    cfg: &'a LoopConfig,
    data: &'a RunData,
    report: &'a mut RunReport,
    opt: SgdOptimizer,
    train_rng: rng::Rng,
}

impl<'a> Runner<'a> {
    fn new(
        net: &'a mut Network,
        cfg: &'a LoopConfig,
        data: &'a RunData,
        report: &'a mut RunReport,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.streams.is_empty() {
            return Err(Error::Empty("task streams"));
        }
        let opt = SgdOptimizer::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        let mut r = Self {
            net,
            cfg,
            data,
            report,
            opt,
            train_rng: rng::stream(cfg.seed, "train"),
        };
        r.pretrain()?;
        Ok(r)
    }

    fn seed_stream(&self, name: &str) -> rng::Rng {
        rng::stream(self.cfg.seed, name)
    }

    fn pretrain(&mut self) -> Result<()> {
        let task0: Vec<Sample> = self.data.streams[0].samples().cloned().collect();
        let missing: Vec<u32> = distinct_labels(&task0)
            .into_iter()
            .filter(|&c| self.net.class_position(c).is_none())
            .collect();
        if !missing.is_empty() {
            self.net
                .expand_head(&missing, &mut self.seed_stream("head/0"))?;
        }
        let mut r = self.seed_stream("pretrain");
        let mut loss = f64::NAN;
        for _ in 0..self.cfg.pretrain_epochs {
            loss =
                train_epoch(self.net, &task0, &mut self.opt, self.cfg.minibatch, &mut r)?.mean_loss;
        }
        self.report.pretrain_steps = self.opt.steps();
        self.report.total_steps = self.opt.steps();
        let accuracy = self.accuracy(0)?;
        self.report.steps.push(StepRecord {
            timestep: 0,
            update: 0,
            global_step: self.opt.steps(),
            queried: 0,
            n_new_inserted: 0,
            train_loss: loss,
            test_accuracy: accuracy,
        });
        self.report.timesteps.push(TimestepRecord {
            timestep: 0,
            head_width: self.net.n_classes(),
            stream_samples: task0.len(),
            pool_samples: 0,
            tau: f64::NAN,
            steps: self.opt.steps(),
            accuracy,
        });
        Ok(())
    }

    fn accuracy(&self, timestep: usize) -> Result<f64> {
        evaluate(
            self.net,
            &self.data.test,
            &self.data.schedule.classes_through(timestep),
        )
    }

    fn expand_for(&mut self, labels: &[u32], timestep: usize) -> Result<()> {
        let new: Vec<u32> = labels
            .iter()
            .copied()
            .filter(|&c| self.net.class_position(c).is_none())
            .collect();
        if !new.is_empty() {
            let mut r = self.seed_stream(&format!("head/{timestep}"));
            self.net.expand_head(&new, &mut r)?;
        }
        Ok(())
    }

    fn train_buffer(&mut self, buffer: &MemoryBuffer, epochs: usize) -> Result<EpochStats> {
        let mut total = EpochStats::default();
        for _ in 0..epochs {
            let s = train_one_epoch(
                self.net,
                buffer,
                &mut self.opt,
                self.cfg.minibatch,
                &mut self.train_rng,
            )?;
            total.steps += s.steps;
            total.mean_loss += s.mean_loss / epochs as f64;
        }
        Ok(total)
    }

    fn record_update(
        &mut self,
        timestep: usize,
        update: usize,
        queried: usize,
        inserted: usize,
        loss: f64,
    ) -> Result<()> {
        let test_accuracy = if self.cfg.eval_every_update {
            self.accuracy(timestep)?
        } else {
            f64::NAN
        };
        self.report.total_steps = self.opt.steps();
        self.report.steps.push(StepRecord {
            timestep,
            update,
            global_step: self.opt.steps(),
            queried,
            n_new_inserted: inserted,
            train_loss: loss,
            test_accuracy,
        });
        Ok(())
    }

    fn finish_timestep(
        &mut self,
        stream: &TaskStream,
        pool_samples: usize,
        tau: f64,
        steps_before: u64,
    ) -> Result<()> {
        let steps = self.opt.steps() - steps_before;
        let accuracy = if stream.n_samples() == 0 {
            self.report.final_accuracy()
        } else {
            self.accuracy(stream.timestep)?
        };
        self.report.total_steps = self.opt.steps();
        self.report.timesteps.push(TimestepRecord {
            timestep: stream.timestep,
            head_width: self.net.n_classes(),
            stream_samples: stream.n_samples(),
            pool_samples,
            tau,
            steps,
            accuracy,
        });
        Ok(())
    }

    fn snapshot(&mut self, timestep: usize, entries: &[MemoryEntry]) {
        let mut counts = BTreeMap::new();
        for e in entries {
            *counts.entry((e.label, e.origin.name())).or_insert(0) += 1;
        }
        self.report
            .compositions
            .push(CompositionSnapshot { timestep, counts });
    }

    /// Full loop and its module ablations.
    fn open_world(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let task0: Vec<Sample> = self.data.streams[0].samples().cloned().collect();
        let mut buffer = init_buffer(
            self.net,
            &task0,
            cfg.buffer_capacity,
            &mut self.seed_stream("buffer"),
        )?;
        // Without a buffer the threshold still needs in-distribution
        // reference data; the initial buffer plays that role.
        let reference = buffer.clone();
        self.snapshot(0, buffer.entries());
        for stream in &self.data.streams[1..] {
            let t = stream.timestep;
            let steps_before = self.opt.steps();
            self.report.stream_size += stream.n_samples();
            let mut pool = CandidatePool::new();
            let tau = if cfg.use_ood {
                let basis = if cfg.use_cl { &buffer } else { &reference };
                let mut r = self.seed_stream(&format!("threshold/{t}"));
                let th = bootstrap_threshold(self.net, basis, &cfg.threshold, &mut r)?;
                let outcome = filter_stream(
                    self.net,
                    stream.batches.iter().cloned(),
                    th.tau,
                    ScoreForm::Eta1,
                    &mut pool,
                    t,
                )?;
                for d in outcome.decisions {
                    self.report.count_ood(t, d.origin, d.score, d.accepted);
                }
                th.tau
            } else {
                for s in stream.samples() {
                    pool.push(s.clone(), t)?;
                }
                f64::NAN
            };
            let pool_samples = pool.len();
            self.expand_for(&pool.distinct_labels(), t)?;

            let mut update = 0;
            if cfg.use_active_query {
                while !pool.is_empty() {
                    let scores = query_scores(self.net, &pool, cfg.chunk_size)?;
                    let queried = select_top(&mut pool, &scores, cfg.acquisition_batch)?;
                    self.absorb(&mut buffer, queried, t, update)?;
                    update += 1;
                }
            } else if !pool.is_empty() {
                // One uniformly drawn query of fixed size at the start of the
                // task; the rest of the pool is never labelled.
                let k = cfg.acquisition_batch.min(pool.len());
                let mut r = self.seed_stream(&format!("query/{t}"));
                let mut picked = index::sample(&mut r, pool.len(), k).into_vec();
                picked.sort_unstable();
                let queried = pool
                    .reveal(&picked)
                    .into_iter()
                    .map(|sample| Queried {
                        sample,
                        score: None,
                    })
                    .collect();
                pool.clear();
                self.absorb(&mut buffer, queried, t, update)?;
            }
            self.snapshot(t, buffer.entries());
            self.finish_timestep(stream, pool_samples, tau, steps_before)?;
        }
        Ok(())
    }

    fn absorb(
        &mut self,
        buffer: &mut MemoryBuffer,
        queried: Vec<Queried>,
        t: usize,
        update: usize,
    ) -> Result<()> {
        let cfg = self.cfg;
        let n = queried.len();
        if cfg.use_cl {
            let scores = memory_scores(buffer, &queried, self.net, cfg.chunk_size)?;
            let outcome = update_buffer(buffer, &queried, &scores, t)?;
            self.report.observe(outcome.inserted_ids.iter().copied(), t);
            let stats = self.train_buffer(buffer, cfg.epochs_per_update)?;
            self.record_update(t, update, n, outcome.n_new_inserted, stats.mean_loss)
        } else {
            let samples: Vec<Sample> = queried.into_iter().map(|q| q.sample).collect();
            self.report.observe(samples.iter().map(|s| s.id), t);
            let mut loss = 0.0;
            for _ in 0..cfg.epochs_per_update {
                let s = train_epoch(
                    self.net,
                    &samples,
                    &mut self.opt,
                    cfg.minibatch,
                    &mut self.train_rng,
                )?;
                loss += s.mean_loss / cfg.epochs_per_update as f64;
            }
            self.record_update(t, update, n, n, loss)
        }
    }

    /// Sequential training on every stream sample, no replay.
    fn finetune(&mut self) -> Result<()> {
        for stream in &self.data.streams[1..] {
            let t = stream.timestep;
            let steps_before = self.opt.steps();
            self.report.stream_size += stream.n_samples();
            let samples: Vec<Sample> = stream.samples().cloned().collect();
            if !samples.is_empty() {
                self.expand_for(&distinct_labels(&samples), t)?;
                self.report.observe(samples.iter().map(|s| s.id), t);
                let mut loss = f64::NAN;
                for _ in 0..self.cfg.baseline_epochs {
                    let s = train_epoch(
                        self.net,
                        &samples,
                        &mut self.opt,
                        self.cfg.minibatch,
                        &mut self.train_rng,
                    )?;
                    loss = s.mean_loss;
                }
                self.record_update(t, 0, samples.len(), samples.len(), loss)?;
            }
            self.finish_timestep(stream, samples.len(), f64::NAN, steps_before)?;
        }
        Ok(())
    }

    /// Class-balanced random buffer filled from the raw stream; training
    /// only on the buffer.
    fn balanced_buffer(&mut self) -> Result<()> {
        let cap = self.cfg.buffer_capacity;
        let mut r = self.seed_stream("balanced");
        let mut entries: Vec<MemoryEntry> = Vec::new();
        let task0: Vec<Sample> = self.data.streams[0].samples().cloned().collect();
        for s in &task0 {
            balanced_insert(&mut entries, s, 0, cap, &mut r);
        }
        self.snapshot(0, &entries);
        for stream in &self.data.streams[1..] {
            let t = stream.timestep;
            let steps_before = self.opt.steps();
            self.report.stream_size += stream.n_samples();
            let mut inserted = Vec::new();
            for s in stream.samples() {
                if balanced_insert(&mut entries, s, t, cap, &mut r) {
                    inserted.push(s.id);
                }
            }
            // Ids evicted later in the same pass still count as observed.
            self.report.observe(inserted.iter().copied(), t);
            let labels: Vec<u32> = {
                let mut l: Vec<u32> = entries.iter().map(|e| e.label).collect();
                l.sort_unstable();
                l.dedup();
                l
            };
            self.expand_for(&labels, t)?;
            if stream.n_samples() > 0 {
                let buffer = MemoryBuffer::from_entries(entries.clone(), cap)?;
                let stats = self.train_buffer(&buffer, self.cfg.baseline_epochs)?;
                self.record_update(t, 0, stream.n_samples(), inserted.len(), stats.mean_loss)?;
            }
            self.snapshot(t, &entries);
            self.finish_timestep(stream, stream.n_samples(), f64::NAN, steps_before)?;
        }
        Ok(())
    }
}

fn distinct_labels(samples: &[Sample]) -> Vec<u32> {
    let mut l: Vec<u32> = samples.iter().map(|s| s.label).collect();
    l.sort_unstable();
    l.dedup();
    l
}

/// Greedy class-balanced reservoir: append while there is room, otherwise
/// replace a random member of the largest class if the newcomer's class is
/// smaller. Returns whether the sample was stored.
fn balanced_insert<R: Rng + ?Sized>(
    entries: &mut Vec<MemoryEntry>,
    s: &Sample,
    t: usize,
    capacity: usize,
    rng: &mut R,
) -> bool {
    let entry = MemoryEntry {
        id: s.id,
        input: s.input.clone(),
        label: s.label,
        entropy: 0.0,
        inserted_at: t,
        origin: s.origin,
    };
    if entries.len() < capacity {
        entries.push(entry);
        return true;
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for e in entries.iter() {
        *counts.entry(e.label).or_insert(0) += 1;
    }
    let own = counts.get(&s.label).copied().unwrap_or(0);
    // Largest class, ties to the lower label.
    let (&big, &big_n) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("buffer is full, so nonempty");
    if own >= big_n {
        return false;
    }
    let members: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].label == big)
        .collect();
    let victim = *members.choose(rng).expect("largest class has members");
    entries[victim] = entry;
    true
}
