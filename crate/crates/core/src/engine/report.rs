use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::metrics::{average_accuracy, ema, fmt_num, series_csv, MetricSeries, DEFAULT_EMA_DECAY};
use crate::stream::Origin;

/// One buffer update (or one training call for the baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub timestep: usize,
    /// Update index within the timestep.
    pub update: usize,
    /// Optimizer steps taken so far, pretraining included.
    pub global_step: u64,
    pub queried: usize,
    pub n_new_inserted: usize,
    pub train_loss: f64,
    /// Cumulative test accuracy after this update; NaN when not evaluated.
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    pub timestep: usize,
    pub head_width: usize,
    pub stream_samples: usize,
    pub pool_samples: usize,
    /// NaN when no threshold was used.
    pub tau: f64,
    /// Optimizer steps taken during this timestep.
    pub steps: u64,
    pub accuracy: f64,
}

/// Accept/reject tallies for one (timestep, origin) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OodCounts {
    pub accepted: usize,
    pub rejected: usize,
}

/// Buffer contents after a timestep: `(class, origin) -> count`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionSnapshot {
    pub timestep: usize,
    pub counts: BTreeMap<(u32, &'static str), usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub variant: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub timesteps: Vec<TimestepRecord>,
    pub compositions: Vec<CompositionSnapshot>,
    pub ood: BTreeMap<(usize, &'static str), OodCounts>,
    /// Scores of every OoD decision: (timestep, origin, score, accepted).
    pub ood_scores: Vec<(usize, Origin, f64, bool)>,
    pub pretrain_steps: u64,
    pub total_steps: u64,
    /// Stream samples offered after timestep 0.
    pub stream_size: usize,
    odp_ids: HashSet<u64>,
    odp_log: Vec<(u64, usize)>,
}

impl RunReport {
    pub fn new(variant: impl Into<String>, seed: u64) -> Self {
        Self {
            variant: variant.into(),
            seed,
            steps: Vec::new(),
            timesteps: Vec::new(),
            compositions: Vec::new(),
            ood: BTreeMap::new(),
            ood_scores: Vec::new(),
            pretrain_steps: 0,
            total_steps: 0,
            stream_size: 0,
            odp_ids: HashSet::new(),
            odp_log: Vec::new(),
        }
    }

    /// Notes samples that became training data; repeated ids count once.
    pub fn observe<I: IntoIterator<Item = u64>>(&mut self, ids: I, timestep: usize) {
        for id in ids {
            if self.odp_ids.insert(id) {
                self.odp_log.push((id, timestep));
            }
        }
    }

    /// Observed data points: distinct samples that ever entered training.
    pub fn odp(&self) -> usize {
        self.odp_ids.len()
    }

    /// First-observation log as `(id, timestep)`.
    pub fn odp_log(&self) -> &[(u64, usize)] {
        &self.odp_log
    }

    /// End-of-task accuracy per timestep, starting at 0.
    pub fn accuracies(&self) -> Vec<f64> {
        self.timesteps.iter().map(|t| t.accuracy).collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.timesteps.last().map_or(f64::NAN, |t| t.accuracy)
    }

    /// Mean end-of-task accuracy over the incremental timesteps (t >= 1).
    pub fn average_accuracy(&self) -> f64 {
        let acc: Vec<f64> = self
            .timesteps
            .iter()
            .filter(|t| t.timestep >= 1)
            .map(|t| t.accuracy)
            .collect();
        average_accuracy(&acc).unwrap_or(f64::NAN)
    }

    pub fn count_ood(&mut self, timestep: usize, origin: Origin, score: f64, accepted: bool) {
        let c = self.ood.entry((timestep, origin.name())).or_default();
        if accepted {
            c.accepted += 1;
        } else {
            c.rejected += 1;
        }
        self.ood_scores.push((timestep, origin, score, accepted));
    }

    pub fn steps_csv(&self) -> String {
        let mut s = String::from(
            "timestep,update,global_step,queried,n_new_inserted,train_loss,test_accuracy\n",
        );
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.timestep,
                r.update,
                r.global_step,
                r.queried,
                r.n_new_inserted,
                fmt_num(r.train_loss),
                fmt_num(r.test_accuracy)
            );
        }
        s
    }

    pub fn timesteps_csv(&self) -> String {
        let mut s =
            String::from("timestep,head_width,stream_samples,pool_samples,tau,steps,accuracy\n");
        for r in &self.timesteps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.timestep,
                r.head_width,
                r.stream_samples,
                r.pool_samples,
                fmt_num(r.tau),
                r.steps,
                fmt_num(r.accuracy)
            );
        }
        s
    }

    pub fn composition_csv(&self) -> String {
        let mut s = String::from("timestep,class,origin,count\n");
        for snap in &self.compositions {
            for ((class, origin), n) in &snap.counts {
                let _ = writeln!(s, "{},{},{},{}", snap.timestep, class, origin, n);
            }
        }
        s
    }

    pub fn ood_csv(&self) -> String {
        let mut s = String::from("timestep,origin,accepted,rejected\n");
        for ((t, origin), c) in &self.ood {
            let _ = writeln!(s, "{t},{origin},{},{}", c.accepted, c.rejected);
        }
        s
    }

    /// Per-update curves after timestep 0, indexed by update number:
    /// queried samples, newly inserted samples and their moving average,
    /// and test accuracy.
    pub fn curves(&self) -> Vec<MetricSeries> {
        let open: Vec<&StepRecord> = self.steps.iter().filter(|r| r.timestep >= 1).collect();
        let col = |name: &str, f: &dyn Fn(&StepRecord) -> f64| {
            let ys: Vec<f64> = open.iter().map(|r| f(r)).collect();
            MetricSeries::from_values(name, &ys)
        };
        let inserted = col("n_new_inserted", &|r| r.n_new_inserted as f64);
        let smoothed = ema(&inserted, DEFAULT_EMA_DECAY).expect("default decay is valid");
        vec![
            col("queried", &|r| r.queried as f64),
            inserted,
            smoothed,
            col("test_accuracy", &|r| r.test_accuracy),
        ]
    }

    pub fn curves_csv(&self) -> String {
        series_csv(&self.curves())
    }

    /// Headline numbers in a fixed textual layout.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "timesteps = {}", self.timesteps.len());
        for t in &self.timesteps {
            let _ = writeln!(s, "accuracy_t{} = {}", t.timestep, fmt_num(t.accuracy));
        }
        let _ = writeln!(s, "final_accuracy = {}", fmt_num(self.final_accuracy()));
        let _ = writeln!(s, "average_accuracy = {}", fmt_num(self.average_accuracy()));
        let _ = writeln!(s, "total_steps = {}", self.total_steps);
        let _ = writeln!(s, "pretrain_steps = {}", self.pretrain_steps);
        let _ = writeln!(s, "odp = {}", self.odp());
        let _ = writeln!(s, "stream_size = {}", self.stream_size);
        let (acc, rej) = self
            .ood
            .values()
            .fold((0, 0), |(a, r), c| (a + c.accepted, r + c.rejected));
        let _ = writeln!(s, "ood_accepted_batches = {acc}");
        let _ = writeln!(s, "ood_rejected_batches = {rej}");
        s
    }
}
