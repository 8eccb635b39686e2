//! Single-label supervision streams, task schedules and the temporal-imbalance
//! check.
//!
//! A stream is a sequence of labels, one per step. For every class it induces
//! a polarity sequence (`+1` where the label matches, `−1` elsewhere) and a
//! cumulative-positive curve `S_k[n]`.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TalError};
use crate::kernel::{q_from_convolution, DecayKernel, Polarity, PolaritySequence};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub new_classes: Vec<usize>,
    pub samples_per_class: usize,
    pub replay_per_old_class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    tasks: Vec<TaskSpec>,
    shuffle_seed: u64,
}

impl TaskSchedule {
    pub fn new(tasks: Vec<TaskSpec>, shuffle_seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(TalError::Schedule("no tasks".into()));
        }
        let mut seen = BTreeSet::new();
        for task in &tasks {
            if task.new_classes.is_empty() || task.samples_per_class == 0 {
                return Err(TalError::Schedule(format!("task {} is empty", task.task_id)));
            }
            for &c in &task.new_classes {
                if !seen.insert(c) {
                    return Err(TalError::Schedule(format!(
                        "class {c} introduced twice (task {})",
                        task.task_id
                    )));
                }
            }
        }
        Ok(Self { tasks, shuffle_seed })
    }

    /// `classes` split into `tasks` equal consecutive groups.
    pub fn uniform(
        classes: usize,
        tasks: usize,
        samples_per_class: usize,
        replay_per_old_class: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if tasks == 0 || classes == 0 || !classes.is_multiple_of(tasks) {
            return Err(TalError::Schedule(format!(
                "{classes} classes cannot be split into {tasks} equal tasks"
            )));
        }
        let per_task = classes / tasks;
        let specs = (0..tasks)
            .map(|t| TaskSpec {
                task_id: t,
                new_classes: (t * per_task..(t + 1) * per_task).collect(),
                samples_per_class,
                replay_per_old_class,
            })
            .collect();
        Self::new(specs, shuffle_seed)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed
    }

    pub fn class_count(&self) -> usize {
        self.tasks.iter().map(|t| t.new_classes.len()).sum()
    }

    /// Highest class id plus one.
    pub fn class_span(&self) -> usize {
        self.tasks
            .iter()
            .flat_map(|t| t.new_classes.iter())
            .max()
            .map_or(0, |&m| m + 1)
    }

    /// Classes introduced before task `index`.
    pub fn classes_before(&self, index: usize) -> Vec<usize> {
        self.tasks[..index].iter().flat_map(|t| t.new_classes.iter().copied()).collect()
    }

    /// Task index that introduces each class; `None` for unused ids.
    pub fn class_task(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.class_span()];
        for (i, t) in self.tasks.iter().enumerate() {
            for &c in &t.new_classes {
                owner[c] = Some(i);
            }
        }
        owner
    }
}

/// A recorded single-label stream over `class_count` classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionTrace {
    labels: Vec<usize>,
    class_count: usize,
    task_starts: Vec<usize>,
}

impl SupervisionTrace {
    pub fn from_labels(labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&y| y >= class_count) {
            return Err(TalError::LabelOutOfRange { label, classes: class_count });
        }
        Ok(Self { labels, class_count, task_starts: vec![0] })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Step index at which each task begins.
    pub fn task_starts(&self) -> &[usize] {
        &self.task_starts
    }

    pub fn polarities(&self, class: usize) -> PolaritySequence {
        let values = self
            .labels
            .iter()
            .map(|&y| if y == class { Polarity::Positive } else { Polarity::Negative })
            .collect();
        PolaritySequence::new(class, values)
    }

    /// `S_k[n]` for `n = 0..len`.
    pub fn cumulative_positives(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .scan(0usize, |acc, &y| {
                *acc += usize::from(y == class);
                Some(*acc)
            })
            .collect()
    }

    pub fn positives(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&y| y == class).count()
    }

    /// Consecutive label batches of at most `batch_size`.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = &[usize]> {
        self.labels.chunks(batch_size.max(1))
    }

    pub fn write_labels_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,label")?;
        for (n, y) in self.labels.iter().enumerate() {
            writeln!(out, "{n},{y}")?;
        }
        Ok(())
    }

    pub fn write_s_curves_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,class,cumulative_positives")?;
        let curves: Vec<Vec<usize>> = (0..self.class_count).map(|k| self.cumulative_positives(k)).collect();
        for n in 0..self.len() {
            for (k, curve) in curves.iter().enumerate() {
                writeln!(out, "{n},{k},{}", curve[n])?;
            }
        }
        Ok(())
    }
}

/// Expands a schedule into a label stream. Within each task the new-class
/// samples and the replay exemplars of older classes are shuffled together.
pub fn generate_stream(schedule: &TaskSchedule, seed: u64) -> Result<SupervisionTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ schedule.shuffle_seed());
    let mut labels = Vec::new();
    let mut task_starts = Vec::with_capacity(schedule.tasks().len());
    for (index, task) in schedule.tasks().iter().enumerate() {
        task_starts.push(labels.len());
        let mut block: Vec<usize> = task
            .new_classes
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, task.samples_per_class))
            .collect();
        for old in schedule.classes_before(index) {
            block.extend(std::iter::repeat_n(old, task.replay_per_old_class));
        }
        block.shuffle(&mut rng);
        labels.extend(block);
    }
    let mut trace = SupervisionTrace::from_labels(labels, schedule.class_span())?;
    trace.task_starts = task_starts;
    Ok(trace)
}

/// Outcome of checking the equal-count temporal-imbalance ordering on one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceVerdict<T> {
    pub q_a: T,
    pub q_b: T,
    pub phi_a: T,
    pub phi_b: T,
    /// `S_a[n] ≥ S_b[n]` for every `n`.
    pub dominance_held: bool,
    /// Dominance is strict at some `n`.
    pub strict_dominance: bool,
    /// `Q_a ≤ Q_b`.
    pub conclusion_held: bool,
    /// `Q_a < Q_b`.
    pub strict_conclusion: bool,
    /// Largest of `|Q_k − (2Φ_k − Σf)|` over the two classes, relative to `max(1, Σf)`.
    pub identity_error: T,
}

impl<T: Scalar> ImbalanceVerdict<T> {
    /// The predicted ordering held, including strictness when it applies.
    pub fn consistent(&self, strict_kernel: bool) -> bool {
        if !self.dominance_held {
            return true;
        }
        self.conclusion_held && (!(strict_kernel && self.strict_dominance) || self.strict_conclusion)
    }
}

/// Summation-by-parts form `Φ = f[0] S[N−1] − Σ_{n<N−1} (f[N−2−n] − f[N−1−n]) S[n]`.
pub fn summation_by_parts_phi<T: Scalar, K: DecayKernel<T>>(kernel: &K, cumulative: &[usize]) -> Result<T> {
    let n = cumulative.len();
    if n == 0 {
        return Err(TalError::EmptySequence);
    }
    let head = kernel.weight(0) * T::from_count(cumulative[n - 1]);
    let tail: T = cumulative[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, &s)| (kernel.weight(n - 2 - i) - kernel.weight(n - 1 - i)) * T::from_count(s))
        .sum();
    Ok(head - tail)
}

/// Checks the ordering on two polarity sequences with equal positive totals.
pub fn verify_imbalance_pair<T: Scalar, K: DecayKernel<T>>(
    kernel: &K,
    a: &PolaritySequence,
    b: &PolaritySequence,
) -> Result<ImbalanceVerdict<T>> {
    if a.len() != b.len() {
        return Err(TalError::Dimension { expected: a.len(), got: b.len() });
    }
    if a.positives() != b.positives() {
        return Err(TalError::Precondition(format!(
            "unequal positive counts: {} vs {}",
            a.positives(),
            b.positives()
        )));
    }
    let q_a: T = q_from_convolution(kernel, a)?;
    let q_b: T = q_from_convolution(kernel, b)?;
    let (s_a, s_b) = (a.cumulative_positives(), b.cumulative_positives());
    let phi_a: T = summation_by_parts_phi(kernel, &s_a)?;
    let phi_b: T = summation_by_parts_phi(kernel, &s_b)?;
    let kernel_mass: T = (0..a.len()).map(|n| kernel.weight(n)).sum();
    let scale = kernel_mass.max(T::one());
    let two = T::lit(2.0);
    let identity_error = ((q_a - (two * phi_a - kernel_mass)).abs() / scale)
        .max((q_b - (two * phi_b - kernel_mass)).abs() / scale);
    let dominance_held = s_a.iter().zip(&s_b).all(|(x, y)| x >= y);
    let strict_dominance = dominance_held && s_a.iter().zip(&s_b).any(|(x, y)| x > y);
    Ok(ImbalanceVerdict {
        q_a,
        q_b,
        phi_a,
        phi_b,
        dominance_held,
        strict_dominance,
        conclusion_held: q_a <= q_b,
        strict_conclusion: q_a < q_b,
        identity_error,
    })
}

/// [`verify_imbalance_pair`] on two classes of a recorded trace.
pub fn verify_theorem1<T: Scalar, K: DecayKernel<T>>(
    kernel: &K,
    trace: &SupervisionTrace,
    class_a: usize,
    class_b: usize,
) -> Result<ImbalanceVerdict<T>> {
    for c in [class_a, class_b] {
        if c >= trace.class_count() {
            return Err(TalError::LabelOutOfRange { label: c, classes: trace.class_count() });
        }
    }
    verify_imbalance_pair(kernel, &trace.polarities(class_a), &trace.polarities(class_b))
}

/// Random pair of length-`len` sequences with `positives` each, where the
/// first is front-loaded relative to the second (`S_a[n] ≥ S_b[n]`).
///
/// The i-th positive of `a` sits at the smaller of two sorted random
/// positions, the i-th positive of `b` at the larger.
pub fn random_dominance_pair<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    positives: usize,
) -> Result<(PolaritySequence, PolaritySequence)> {
    if positives > len || len == 0 {
        return Err(TalError::Precondition(format!("{positives} positives do not fit in {len} steps")));
    }
    let draw = |rng: &mut R| {
        let mut idx = rand::seq::index::sample(rng, len, positives).into_vec();
        idx.sort_unstable();
        idx
    };
    let (x, y) = (draw(rng), draw(rng));
    let mut a = vec![Polarity::Negative; len];
    let mut b = vec![Polarity::Negative; len];
    for (&i, &j) in x.iter().zip(&y) {
        a[i.min(j)] = Polarity::Positive;
        b[i.max(j)] = Polarity::Positive;
    }
    Ok((PolaritySequence::new(0, a), PolaritySequence::new(1, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::MemoryKernel;

    #[test]
    fn two_single_class_tasks() {
        let schedule = TaskSchedule::uniform(2, 2, 10, 0, 0).unwrap();
        let trace = generate_stream(&schedule, 1).unwrap();
        let s0 = trace.cumulative_positives(0);
        let s1 = trace.cumulative_positives(1);
        assert_eq!(s0[9], 10);
        assert!(s0[10..].iter().all(|&s| s == 10));
        assert!(s1[..10].iter().all(|&s| s == 0));
        assert_eq!(s1[19], 10);
        assert_eq!(trace.task_starts(), &[0, 10]);
    }

    #[test]
    fn earlier_class_dominates() {
        let schedule = TaskSchedule::uniform(6, 3, 40, 0, 9).unwrap();
        let trace = generate_stream(&schedule, 4).unwrap();
        let early = trace.cumulative_positives(0);
        let late = trace.cumulative_positives(5);
        assert!(early.iter().zip(&late).all(|(a, b)| a >= b));
    }

    #[test]
    fn replay_keeps_old_curves_rising() {
        let schedule = TaskSchedule::uniform(4, 2, 30, 2, 0).unwrap();
        let trace = generate_stream(&schedule, 0).unwrap();
        let s0 = trace.cumulative_positives(0);
        assert_eq!(s0[59], 30);
        assert_eq!(*s0.last().unwrap(), 32);
        assert_eq!(trace.positives(3), 30);
    }

    #[test]
    fn trace_is_single_label_and_counts_match() {
        let schedule = TaskSchedule::uniform(10, 5, 25, 3, 11).unwrap();
        let trace = generate_stream(&schedule, 5).unwrap();
        let total: usize = (0..10).map(|k| trace.positives(k)).sum();
        assert_eq!(total, trace.len());
        for (t, task) in schedule.tasks().iter().enumerate() {
            for &c in &task.new_classes {
                let later_tasks = schedule.tasks().len() - 1 - t;
                assert_eq!(trace.positives(c), 25 + 3 * later_tasks);
            }
        }
        for k in 0..10 {
            let s = trace.cumulative_positives(k);
            assert!(s.windows(2).all(|w| w[1] >= w[0] && w[1] - w[0] <= 1));
            assert!(s.iter().enumerate().all(|(n, &v)| v <= n + 1));
        }
    }

    #[test]
    fn schedule_validation() {
        let bad = TaskSpec { task_id: 1, new_classes: vec![0], samples_per_class: 5, replay_per_old_class: 0 };
        let ok = TaskSpec { task_id: 0, new_classes: vec![0], samples_per_class: 5, replay_per_old_class: 0 };
        assert!(TaskSchedule::new(vec![ok.clone(), bad], 0).is_err());
        let empty = TaskSpec { task_id: 0, new_classes: vec![], samples_per_class: 5, replay_per_old_class: 0 };
        assert!(TaskSchedule::new(vec![empty], 0).is_err());
        assert!(TaskSchedule::new(vec![], 0).is_err());
        assert!(TaskSchedule::uniform(10, 3, 5, 0, 0).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let schedule = TaskSchedule::uniform(6, 3, 20, 2, 3).unwrap();
        assert_eq!(generate_stream(&schedule, 8).unwrap(), generate_stream(&schedule, 8).unwrap());
        assert_ne!(generate_stream(&schedule, 8).unwrap(), generate_stream(&schedule, 9).unwrap());
    }

    #[test]
    fn front_vs_back_loaded_is_strict() {
        let kernel = MemoryKernel::new(0.9f64).unwrap();
        let a = PolaritySequence::from_signs(0, &[1, 1, 1, -1, -1, -1]).unwrap();
        let b = PolaritySequence::from_signs(1, &[-1, -1, -1, 1, 1, 1]).unwrap();
        let v = verify_imbalance_pair(&kernel, &a, &b).unwrap();
        assert!(v.strict_dominance && v.strict_conclusion);
        assert!(v.identity_error < 1e-12);
    }

    #[test]
    fn identical_sequences_tie_exactly() {
        let kernel = MemoryKernel::new(0.99f64).unwrap();
        let a = PolaritySequence::from_signs(0, &[1, -1, -1, 1, -1]).unwrap();
        let v = verify_imbalance_pair(&kernel, &a, &a).unwrap();
        assert_eq!(v.q_a, v.q_b);
        assert!(v.dominance_held && !v.strict_dominance && !v.strict_conclusion);
    }

    #[test]
    fn unequal_counts_rejected() {
        let kernel = MemoryKernel::new(0.9f64).unwrap();
        let a = PolaritySequence::from_signs(0, &[1, 1, -1]).unwrap();
        let b = PolaritySequence::from_signs(1, &[1, -1, -1]).unwrap();
        assert!(matches!(verify_imbalance_pair::<f64, _>(&kernel, &a, &b), Err(TalError::Precondition(_))));
    }

    #[test]
    fn trace_pair_from_schedule() {
        let schedule = TaskSchedule::uniform(4, 2, 50, 0, 2).unwrap();
        let trace = generate_stream(&schedule, 3).unwrap();
        let kernel = MemoryKernel::new(0.99f64).unwrap();
        let v = verify_theorem1(&kernel, &trace, 0, 3).unwrap();
        assert!(v.dominance_held && v.strict_conclusion);
    }

    #[test]
    fn dominance_pair_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (a, b) = random_dominance_pair(&mut rng, 40, 12).unwrap();
            assert_eq!(a.positives(), 12);
            assert_eq!(b.positives(), 12);
            let (sa, sb) = (a.cumulative_positives(), b.cumulative_positives());
            assert!(sa.iter().zip(&sb).all(|(x, y)| x >= y));
        }
    }

    #[test]
    fn csv_exports() {
        let trace = SupervisionTrace::from_labels(vec![1, 0], 2).unwrap();
        let mut buf = Vec::new();
        trace.write_labels_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,label\n0,1\n1,0\n");
        let mut buf = Vec::new();
        trace.write_s_curves_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,class,cumulative_positives\n0,0,0\n0,1,1\n1,0,1\n1,1,1\n"
        );
    }
}
