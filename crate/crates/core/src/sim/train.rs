//! Task-sequential training with replay under either cross-entropy or the
//! temporal-adjusted loss.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::data::{exemplar_priority, make_gaussian_tasks, GaussianTaskParams, SyntheticDataset};
use crate::error::{Result, TalError};
use crate::kernel::{update_batched, Exponent, MemoryKernel, QState};
use crate::loss::{ce_forward, label_histogram, training_step, TalConfig, DEFAULT_EPSILON};
use crate::metrics::{accuracy, confusion_and_prf, MetricsReport, PerClassRecord, QSnapshot, StepEvent};
use crate::stream::TaskSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(alias = "CE")]
    Ce,
    #[serde(alias = "TAL")]
    Tal,
}

impl LossKind {
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Tal => "tal",
        }
    }
}

/// Loss choice plus the `Q` tracker parameters. Under cross-entropy `Q` is
/// still tracked with the same `(λ, r)` as a diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub kind: LossKind,
    pub lambda: f64,
    pub r: f64,
    pub epsilon: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { kind: LossKind::Ce, lambda: 0.995, r: 1.0, epsilon: DEFAULT_EPSILON }
    }
}

impl LossSettings {
    pub fn tal(lambda: f64, r: f64) -> Self {
        Self { kind: LossKind::Tal, lambda, r, ..Default::default() }
    }

    pub fn ce() -> Self {
        Self::default()
    }

    /// `r < 1` is admitted (with warnings instead of range assertions).
    pub fn exponent(&self) -> Result<Exponent<f64>> {
        Exponent::relaxed(self.r)
    }

    fn tal_config(&self, kernel: MemoryKernel<f64>, classes: usize) -> Result<TalConfig<f64>> {
        TalConfig::relaxed(kernel, self.r, classes, self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSettings,
    pub learning_rate: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    /// Record a `Q` snapshot every this many steps (task ends are always recorded).
    pub q_snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSettings::default(),
            learning_rate: 0.05,
            epochs_per_task: 15,
            batch_size: 32,
            hidden_units: 0,
            q_snapshot_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TalError::Precondition(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs_per_task == 0 || self.batch_size == 0 {
            return Err(TalError::Precondition("epochs and batch size must be positive".into()));
        }
        let kernel = MemoryKernel::new(self.loss.lambda)?;
        let exponent = self.loss.exponent()?;
        if exponent.value() >= 1.0 {
            kernel.ensure_training_domain()?;
        }
        if !(self.loss.epsilon > 0.0 && self.loss.epsilon <= 1e-6) {
            return Err(TalError::Precondition(format!("epsilon {} outside (0, 1e-6]", self.loss.epsilon)));
        }
        Ok(())
    }
}

/// Mutable state of one run. `q_state` always has one entry per classifier column.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub classifier: Classifier,
    pub q_state: QState<f64>,
    pub tal: Option<TalConfig<f64>>,
    kernel: MemoryKernel<f64>,
    exponent: Exponent<f64>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    seed: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let classifier = Classifier::new(input_dim, config.hidden_units, 0, &mut rng);
        Ok(Self {
            classifier,
            q_state: QState::zeros(0),
            tal: None,
            kernel: MemoryKernel::new(config.loss.lambda)?,
            exponent: config.loss.exponent()?,
            config,
            rng,
            seed,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn add_classes(&mut self, n: usize) -> Result<()> {
        self.classifier.grow(n);
        self.q_state.grow(n);
        let classes = self.classifier.class_count();
        self.tal = match self.config.loss.kind {
            LossKind::Tal if classes >= 2 => Some(self.config.loss.tal_config(self.kernel, classes)?),
            _ => None,
        };
        Ok(())
    }

    /// One minibatch: loss against the current `Q`, parameter step, `Q` advance.
    fn step(&mut self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.classifier.logits(x);
        let (output, next_q) = match &self.tal {
            Some(cfg) => training_step(cfg, &self.q_state, logits.view(), labels)?,
            None => {
                let out = ce_forward(logits.view(), labels)?;
                let counts = label_histogram(labels, self.q_state.class_count())?;
                let next = update_batched(&self.q_state, &self.kernel, self.exponent, &counts, labels.len())?;
                (out, next)
            }
        };
        if !output.loss.is_finite() {
            return Err(TalError::Divergence { step: self.q_state.step() as usize, loss: output.loss });
        }
        self.classifier.sgd_step(x, output.grad_logits.view(), self.config.learning_rate);
        self.q_state = next_q;
        Ok(output.loss)
    }
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Requires the schedule to introduce classes `0, 1, 2, …` in order, so the
/// classifier column of a class equals its id.
fn check_schedule(schedule: &TaskSchedule, dataset: &SyntheticDataset) -> Result<()> {
    let order: Vec<usize> = schedule.tasks().iter().flat_map(|t| t.new_classes.iter().copied()).collect();
    if order.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(TalError::Schedule("classes must be introduced in order 0, 1, 2, ...".into()));
    }
    if order.len() > dataset.class_count() {
        return Err(TalError::Schedule(format!(
            "schedule uses {} classes, dataset has {}",
            order.len(),
            dataset.class_count()
        )));
    }
    for task in schedule.tasks() {
        for &c in &task.new_classes {
            let available = dataset.train_indices(c).len();
            if available < task.samples_per_class {
                return Err(TalError::Schedule(format!(
                    "class {c} has {available} training samples, schedule asks for {}",
                    task.samples_per_class
                )));
            }
        }
    }
    Ok(())
}

/// Trains task by task, evaluating on all seen classes after each task.
pub fn train_incremental(
    mut state: TrainState,
    dataset: &SyntheticDataset,
    schedule: &TaskSchedule,
) -> Result<MetricsReport> {
    check_schedule(schedule, dataset)?;
    if dataset.dim() != state.classifier.input_dim() {
        return Err(TalError::Dimension { expected: state.classifier.input_dim(), got: dataset.dim() });
    }
    let cfg = state.config;
    let class_task: Vec<usize> = schedule
        .tasks()
        .iter()
        .enumerate()
        .flat_map(|(t, task)| std::iter::repeat_n(t, task.new_classes.len()))
        .collect();
    let mut exemplars: Vec<Vec<usize>> = Vec::new();
    let mut report = MetricsReport {
        seed: state.seed,
        loss: cfg.loss.kind.label().to_string(),
        accuracy_matrix: Vec::new(),
        task_accuracy: Vec::new(),
        per_class: Vec::new(),
        q_snapshots: Vec::new(),
        events: Vec::new(),
        class_task: class_task.clone(),
    };

    for (t, task) in schedule.tasks().iter().enumerate() {
        state.add_classes(task.new_classes.len())?;
        let mut pool: Vec<usize> = task
            .new_classes
            .iter()
            .flat_map(|&c| dataset.train_indices(c).into_iter().take(task.samples_per_class))
            .collect();
        for list in &exemplars {
            pool.extend(list.iter().take(task.replay_per_old_class));
        }

        for epoch in 0..cfg.epochs_per_task {
            pool.shuffle(&mut state.rng);
            for batch in pool.chunks(cfg.batch_size) {
                let x = gather(&dataset.train_x, batch);
                let labels: Vec<usize> = batch.iter().map(|&i| dataset.train_y[i]).collect();
                let loss = state.step(x.view(), &labels)?;
                let step = state.q_state.step();
                report.events.push(StepEvent { task: t, epoch, step, batch_size: batch.len(), loss });
                if cfg.q_snapshot_every > 0 && step.is_multiple_of(cfg.q_snapshot_every as u64) {
                    report.q_snapshots.push(QSnapshot { task: t, step, q: state.q_state.values().to_vec() });
                }
            }
        }
        report.q_snapshots.push(QSnapshot { task: t, step: state.q_state.step(), q: state.q_state.values().to_vec() });

        let seen = state.classifier.class_count();
        let test_rows: Vec<usize> = (0..dataset.test_y.len()).filter(|&i| dataset.test_y[i] < seen).collect();
        let x = gather(&dataset.test_x, &test_rows);
        let labels: Vec<usize> = test_rows.iter().map(|&i| dataset.test_y[i]).collect();
        let predictions = state.classifier.predict(x.view());
        report.task_accuracy.push(accuracy(&predictions, &labels)?);
        let row = (0..=t)
            .map(|j| {
                let (p, y): (Vec<usize>, Vec<usize>) = predictions
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &y)| class_task[y] == j)
                    .map(|(&p, &y)| (p, y))
                    .unzip();
                accuracy(&p, &y)
            })
            .collect::<Result<Vec<f64>>>()?;
        report.accuracy_matrix.push(row);
        for metrics in confusion_and_prf(&predictions, &labels, seen)? {
            let q_value = state.q_state.values()[metrics.class_id];
            report.per_class.push(PerClassRecord { task: t, metrics, q_value });
        }

        for &c in &task.new_classes {
            exemplars.push(exemplar_priority(dataset, c));
        }
    }
    Ok(report)
}

/// A full synthetic experiment: data parameters plus training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub data: GaussianTaskParams,
    pub train: TrainConfig,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()
    }

    /// Data generation, initialization and shuffling all derive from `seed`.
    pub fn run(&self, seed: u64) -> Result<MetricsReport> {
        let (dataset, schedule) = make_gaussian_tasks(&self.data, seed)?;
        let state = TrainState::new(self.train, dataset.dim(), seed)?;
        train_incremental(state, &dataset, &schedule)
    }

    pub fn with_loss(&self, loss: LossSettings) -> Self {
        Self { train: TrainConfig { loss, ..self.train }, ..self.clone() }
    }
}
