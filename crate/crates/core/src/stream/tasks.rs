use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{corrupt_in_place, Corruption, Dataset, Origin, Sample};

/// Class sets per timestep; timestep 0 is the pretraining task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSchedule {
    tasks: Vec<Vec<u32>>,
    disjoint: bool,
}

impl TaskSchedule {
    pub fn new(tasks: Vec<Vec<u32>>, disjoint: bool) -> Result<Self> {
        if tasks.is_empty() || tasks.iter().any(|t| t.is_empty()) {
            return Err(Error::Empty("task schedule or one of its class sets"));
        }
        if disjoint {
            let mut seen = HashSet::new();
            for &c in tasks.iter().flatten() {
                if !seen.insert(c) {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} appears in two timesteps"
                    )));
                }
            }
        }
        Ok(Self { tasks, disjoint })
    }

    /// Consecutive disjoint groups of `per_task` classes from `classes`.
    pub fn split(classes: &[u32], per_task: usize) -> Result<Self> {
        if per_task == 0 {
            return Err(Error::InvalidArgument(
                "classes per task must be positive".into(),
            ));
        }
        Self::new(
            classes.chunks(per_task).map(<[u32]>::to_vec).collect(),
            true,
        )
    }

    pub fn tasks(&self) -> &[Vec<u32>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn disjoint(&self) -> bool {
        self.disjoint
    }

    /// Classes introduced up to and including `timestep`.
    pub fn classes_through(&self, timestep: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.tasks[..=timestep.min(self.tasks.len() - 1)].concat();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub timestep: usize,
    pub classes: Vec<u32>,
    pub batches: Vec<Vec<Sample>>,
}

impl TaskStream {
    pub fn n_samples(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.batches.iter().flatten()
    }
}

/// Sample ids are dataset row indices plus `id_offset`.
pub fn make_split_tasks(
    dataset: &Dataset,
    schedule: &TaskSchedule,
    batch_size: usize,
    id_offset: u64,
    seed: u64,
) -> Result<Vec<TaskStream>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let known: HashSet<u32> = dataset.labels.iter().copied().collect();
    if let Some(&c) = schedule
        .tasks()
        .iter()
        .flatten()
        .find(|c| !known.contains(c))
    {
        return Err(Error::UnknownClass(c));
    }
    let all = dataset.samples(id_offset);
    let mut r = rng::stream(seed, "split");
    schedule
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, classes)| {
            let mut samples: Vec<Sample> = all
                .iter()
                .filter(|s| classes.contains(&s.label))
                .cloned()
                .collect();
            samples.shuffle(&mut r);
            Ok(TaskStream {
                timestep: t,
                classes: classes.clone(),
                batches: samples.chunks(batch_size).map(<[Sample]>::to_vec).collect(),
            })
        })
        .collect()
}

/// Hands out fresh sample ids for injected data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new(start: u64) -> Self {
        Self { next: start }
    }

    pub fn take(&mut self, n: usize) -> Range<u64> {
        let start = self.next;
        self.next += n as u64;
        start..self.next
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub corruption: Corruption,
    pub corrupted_fraction: f64,
    pub foreign_fraction: f64,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, f) = (self.corrupted_fraction, self.foreign_fraction);
        if !(0.0..=1.0).contains(&c) || !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "fractions must lie in [0, 1], got {c} and {f}"
            )));
        }
        // Every emission draws its kind independently, so the clean stream
        // only drains when clean batches keep a positive share.
        if c + f >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "injected fractions sum to {} (need < 1)",
                c + f
            )));
        }
        self.corruption.validate()
    }
}

/// Interleaves corrupted copies of task batches and foreign batches into the
/// task stream. Each emission is corrupted with probability
/// `corrupted_fraction`, foreign with `foreign_fraction`, and otherwise the
/// next clean batch; emission stops once the clean batches run out.
///
/// Foreign samples are annotated with a class of the current task (the
/// labeller is asked anyway) but keep [`Origin::Foreign`].
pub fn mix_streams(
    stream: &TaskStream,
    spec: &MixSpec,
    foreign: &Dataset,
    ids: &mut IdAllocator,
    seed: u64,
) -> Result<TaskStream> {
    spec.validate()?;
    if spec.foreign_fraction > 0.0 && foreign.is_empty() {
        return Err(Error::Empty("foreign dataset"));
    }
    let mut r = rng::stream(seed, &format!("mix/{}", stream.timestep));
    let mut out = Vec::new();
    let mut clean = stream.batches.iter();
    let size_of = |r: &mut rng::Rng| stream.batches[r.random_range(0..stream.batches.len())].len();
    loop {
        let u: f64 = r.random();
        if u < spec.corrupted_fraction {
            let src = &stream.batches[r.random_range(0..stream.batches.len())];
            let id_range = ids.take(src.len());
            let mut batch = Vec::with_capacity(src.len());
            for (s, id) in src.iter().zip(id_range) {
                let mut input = s.input.clone();
                corrupt_in_place(&mut input, spec.corruption, &mut r)?;
                batch.push(Sample {
                    id,
                    input,
                    label: s.label,
                    origin: Origin::Corrupted(spec.corruption.kind),
                });
            }
            out.push(batch);
        } else if u < spec.corrupted_fraction + spec.foreign_fraction {
            let n = size_of(&mut r);
            let batch = ids
                .take(n)
                .map(|id| {
                    let i = r.random_range(0..foreign.len());
                    let k = foreign.labels[i] as usize % stream.classes.len();
                    Sample {
                        id,
                        input: foreign.inputs.row(i).to_vec(),
                        label: stream.classes[k],
                        origin: Origin::Foreign,
                    }
                })
                .collect();
            out.push(batch);
        } else {
            match clean.next() {
                Some(b) => out.push(b.clone()),
                None => break,
            }
        }
    }
    Ok(TaskStream {
        timestep: stream.timestep,
        classes: stream.classes.clone(),
        batches: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{synth_generate, CorruptionKind, SynthSpec};

    fn data() -> Dataset {
        synth_generate(&SynthSpec::new(4, 6, 1.0, 0.1, 200, 5)).unwrap()
    }

    #[test]
    fn split_partitions_scheduled_classes() {
        let d = data();
        let sched = TaskSchedule::split(&[0, 1, 2, 3], 2).unwrap();
        let streams = make_split_tasks(&d, &sched, 8, 0, 1).unwrap();
        assert_eq!(streams.len(), 2);
        let mut ids: Vec<u64> = streams
            .iter()
            .flat_map(|s| s.samples().map(|x| x.id))
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..200).collect::<Vec<_>>());
        for s in &streams {
            assert!(s.samples().all(|x| s.classes.contains(&x.label)));
            assert!(s.batches.iter().all(|b| b.len() <= 8));
        }
        assert_eq!(streams, make_split_tasks(&d, &sched, 8, 0, 1).unwrap());
        assert_ne!(streams, make_split_tasks(&d, &sched, 8, 0, 2).unwrap());
    }

    #[test]
    fn schedule_errors() {
        let d = data();
        let sched = TaskSchedule::new(vec![vec![0], vec![9]], true).unwrap();
        assert!(matches!(
            make_split_tasks(&d, &sched, 8, 0, 1),
            Err(Error::UnknownClass(9))
        ));
        assert!(TaskSchedule::new(vec![vec![0, 1], vec![1]], true).is_err());
        assert!(TaskSchedule::new(vec![vec![0, 1], vec![1]], false).is_ok());
    }

    fn mix(c: f64, f: f64, batches: usize) -> TaskStream {
        let s = TaskStream {
            timestep: 1,
            classes: vec![2, 3],
            batches: (0..batches)
                .map(|b| {
                    vec![Sample {
                        id: b as u64,
                        input: vec![0.5; 3],
                        label: 2,
                        origin: Origin::Clean,
                    }]
                })
                .collect(),
        };
        let foreign = synth_generate(&SynthSpec::new(2, 3, 1.0, 0.1, 20, 1)).unwrap();
        let spec = MixSpec {
            corruption: Corruption::new(CorruptionKind::Gaussian, 0.5).unwrap(),
            corrupted_fraction: c,
            foreign_fraction: f,
        };
        mix_streams(&s, &spec, &foreign, &mut IdAllocator::new(1_000_000), 4).unwrap()
    }

    #[test]
    fn zero_fractions_is_identity() {
        let m = mix(0.0, 0.0, 30);
        assert_eq!(m.batches.len(), 30);
        assert!(m.samples().all(|s| s.origin == Origin::Clean));
    }

    #[test]
    fn quarter_fractions_binomial() {
        let m = mix(0.25, 0.25, 500);
        let n = m.batches.len();
        let corrupted = m
            .batches
            .iter()
            .filter(|b| matches!(b[0].origin, Origin::Corrupted(_)))
            .count();
        let foreign = m
            .batches
            .iter()
            .filter(|b| b[0].origin == Origin::Foreign)
            .count();
        assert_eq!(n - corrupted - foreign, 500);
        let expect = 0.25 * n as f64;
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        assert!(
            (corrupted as f64 - expect).abs() < 3.0 * sd,
            "{corrupted} of {n}"
        );
        assert!(m
            .samples()
            .filter(|s| s.origin == Origin::Foreign)
            .all(|s| s.label == 2 || s.label == 3));
        let mut ids: Vec<u64> = m.samples().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), m.n_samples());
    }

    #[test]
    fn fraction_sum_must_leave_room_for_clean() {
        let spec = MixSpec {
            corruption: Corruption::new(CorruptionKind::Gaussian, 0.5).unwrap(),
            corrupted_fraction: 0.5,
            foreign_fraction: 0.5,
        };
        assert!(spec.validate().is_err());
    }
}
