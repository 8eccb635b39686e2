//! Classification metrics and the per-run report.
//!
//! Precision of a class that was never predicted is `None`, not zero, so a
//! fully forgotten class cannot distort the asymmetry statistics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TalError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    /// `TP / (TP + FP)`; `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `TP / (TP + FN)`; `None` when the class has no test samples.
    pub recall: Option<f64>,
}

impl ClassMetrics {
    /// `precision − recall` when both are defined.
    pub fn asymmetry(&self) -> Option<f64> {
        Some(self.precision? - self.recall?)
    }
}

fn check_pairs(predictions: &[usize], labels: &[usize], classes: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(TalError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(TalError::Dimension { expected: labels.len(), got: predictions.len() });
    }
    if let Some(&label) = labels.iter().chain(predictions).find(|&&y| y >= classes) {
        return Err(TalError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// `m[true][predicted]` counts.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_pairs(predictions, labels, classes)?;
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        m[y][p] += 1;
    }
    Ok(m)
}

pub fn confusion_and_prf(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<ClassMetrics>> {
    let m = confusion_matrix(predictions, labels, classes)?;
    Ok((0..classes)
        .map(|k| {
            let tp = m[k][k];
            let support: usize = m[k].iter().sum();
            let predicted: usize = m.iter().map(|row| row[k]).sum();
            let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
            ClassMetrics {
                class_id: k,
                support,
                predicted,
                true_positives: tp,
                precision: ratio(tp, predicted),
                recall: ratio(tp, support),
            }
        })
        .collect())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(TalError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(TalError::Dimension { expected: labels.len(), got: predictions.len() });
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `Σ TP / Σ support`.
pub fn micro_recall(per_class: &[ClassMetrics]) -> Option<f64> {
    let support: usize = per_class.iter().map(|c| c.support).sum();
    let tp: usize = per_class.iter().map(|c| c.true_positives).sum();
    (support > 0).then(|| tp as f64 / support as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(TalError::Dimension { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 3 {
        return Err(TalError::UndefinedCorrelation(format!("{} points, need at least 3", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(TalError::NonFinite("correlation input"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| TalError::UndefinedCorrelation("constant input".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryReport {
    /// `(class_id, precision − recall)`; `None` where either is undefined.
    pub per_class: Vec<(usize, Option<f64>)>,
    /// Spearman correlation of `precision − recall` against class age over
    /// the classes where it is defined. Positive: older classes lean toward precision.
    pub age_correlation: f64,
    pub classes_used: usize,
}

/// `ages[i]` is the age of `per_class[i]`; larger means introduced earlier.
pub fn asymmetry_index(per_class: &[ClassMetrics], ages: &[f64]) -> Result<AsymmetryReport> {
    if per_class.len() != ages.len() {
        return Err(TalError::Dimension { expected: per_class.len(), got: ages.len() });
    }
    let indices: Vec<(usize, Option<f64>)> = per_class.iter().map(|c| (c.class_id, c.asymmetry())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = indices
        .iter()
        .zip(ages)
        .filter_map(|((_, d), &age)| d.map(|d| (age, d)))
        .unzip();
    let age_correlation = spearman(&xs, &ys)?;
    Ok(AsymmetryReport { per_class: indices, age_correlation, classes_used: xs.len() })
}

/// For each task `t`, its accuracy after tasks `t, t+1, …`.
pub fn forgetting_curve(accuracy_matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..accuracy_matrix.len())
        .map(|t| accuracy_matrix[t..].iter().filter_map(|row| row.get(t).copied()).collect())
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRecord {
    pub task: usize,
    pub metrics: ClassMetrics,
    pub q_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSnapshot {
    pub task: usize,
    pub step: u64,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub task: usize,
    pub epoch: usize,
    pub step: u64,
    pub batch_size: usize,
    pub loss: f64,
}

/// Outcome of one incremental training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub loss: String,
    /// Row `t`: accuracy on each task `j ≤ t` after training task `t`.
    pub accuracy_matrix: Vec<Vec<f64>>,
    /// Accuracy over all seen classes after each task.
    pub task_accuracy: Vec<f64>,
    pub per_class: Vec<PerClassRecord>,
    pub q_snapshots: Vec<QSnapshot>,
    pub events: Vec<StepEvent>,
    /// Task index that introduced each class.
    pub class_task: Vec<usize>,
}

impl MetricsReport {
    pub fn a_mean(&self) -> f64 {
        mean_std(&self.task_accuracy).0
    }

    pub fn a_last(&self) -> f64 {
        self.task_accuracy.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_task(&self) -> usize {
        self.task_accuracy.len().saturating_sub(1)
    }

    /// Per-class records after the last task, ordered by class id.
    pub fn final_per_class(&self) -> Vec<&PerClassRecord> {
        let last = self.final_task();
        let mut v: Vec<_> = self.per_class.iter().filter(|r| r.task == last).collect();
        v.sort_by_key(|r| r.metrics.class_id);
        v
    }

    /// Age of each class at the end of the run: tasks elapsed since it arrived.
    pub fn class_ages(&self) -> Vec<f64> {
        let last = self.final_task();
        self.class_task.iter().map(|&t| (last - t.min(last)) as f64).collect()
    }

    /// Asymmetry of the final per-class metrics against class age.
    pub fn final_asymmetry(&self) -> Result<AsymmetryReport> {
        let recs = self.final_per_class();
        let ages = self.class_ages();
        let metrics: Vec<ClassMetrics> = recs.iter().map(|r| r.metrics).collect();
        let ages: Vec<f64> = recs.iter().map(|r| ages[r.metrics.class_id]).collect();
        asymmetry_index(&metrics, &ages)
    }

    /// Spearman correlation of final `Q_k` against final recall.
    pub fn q_recall_correlation(&self) -> Result<f64> {
        let (q, recall): (Vec<f64>, Vec<f64>) = self
            .final_per_class()
            .iter()
            .filter_map(|r| r.metrics.recall.map(|rec| (r.q_value, rec)))
            .unzip();
        spearman(&q, &recall)
    }

    pub fn write_accuracy_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "seed,loss,after_task,eval_task,accuracy")?;
        for (t, row) in self.accuracy_matrix.iter().enumerate() {
            for (j, acc) in row.iter().enumerate() {
                writeln!(out, "{},{},{t},{j},{acc}", self.seed, self.loss)?;
            }
        }
        Ok(())
    }

    pub fn write_per_class_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "seed,loss,task,class_id,precision,recall,support,q_value")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        for r in &self.per_class {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.seed,
                self.loss,
                r.task,
                r.metrics.class_id,
                opt(r.metrics.precision),
                opt(r.metrics.recall),
                r.metrics.support,
                r.q_value
            )?;
        }
        Ok(())
    }

    pub fn write_q_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "seed,loss,task,step,class_id,q_value")?;
        for s in &self.q_snapshots {
            for (k, q) in s.q.iter().enumerate() {
                writeln!(out, "{},{},{},{},{k},{q}", self.seed, self.loss, s.task, s.step)?;
            }
        }
        Ok(())
    }

    pub fn write_events_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(
                out,
                "{{\"seed\":{},\"loss\":\"{}\",\"task\":{},\"epoch\":{},\"step\":{},\"batch_size\":{},\"value\":{}}}",
                self.seed, self.loss, e.task, e.epoch, e.step, e.batch_size, e.loss
            )?;
        }
        Ok(())
    }
}
