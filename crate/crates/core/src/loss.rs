//! Temporal-adjusted cross-entropy and its gradient with respect to logits.
//!
//! For a sample with label `y`, every non-true logit is shifted by the
//! stabilized log-weight `ℓ_k = ln(α · max(s_k, ε))` with `s_k = (Q_k/Q_max)^r`,
//! the true logit is left untouched, and the loss is
//! `logsumexp(z̃) − z_y`. `Q` is treated as a constant: no gradient flows
//! into it.

use ndarray::{Array2, ArrayView2};

use crate::calibration::{solve_with, CalibrationResult};
use crate::error::{Result, TalError};
use crate::kernel::{update_batched, Exponent, MemoryKernel, QState};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// One fully calibrated loss instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TalConfig<T> {
    kernel: MemoryKernel<T>,
    exponent: Exponent<T>,
    calibration: CalibrationResult<T>,
    epsilon: T,
}

impl<T: Scalar> TalConfig<T> {
    /// Requires `λ ≥ 1/2`, `r ≥ 1`, `C ≥ 2` and `ε ∈ (0, 1e-6]`.
    pub fn new(kernel: MemoryKernel<T>, r: T, classes: usize, epsilon: T) -> Result<Self> {
        kernel.ensure_training_domain()?;
        Self::build(kernel, Exponent::new(r)?, classes, epsilon)
    }

    /// Admits `0 < r < 1`; range violations of `Q` then only warn.
    pub fn relaxed(kernel: MemoryKernel<T>, r: T, classes: usize, epsilon: T) -> Result<Self> {
        let exponent = Exponent::relaxed(r)?;
        if exponent.value() >= T::one() {
            kernel.ensure_training_domain()?;
        }
        Self::build(kernel, exponent, classes, epsilon)
    }

    fn build(kernel: MemoryKernel<T>, exponent: Exponent<T>, classes: usize, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon <= T::lit(1e-6)) {
            return Err(TalError::Precondition(format!("epsilon {epsilon} outside (0, 1e-6]")));
        }
        let calibration = solve_with(classes, exponent)?;
        Ok(Self { kernel, exponent, calibration, epsilon })
    }

    /// Re-solves `α` for a new class count; everything else is kept.
    pub fn with_class_count(&self, classes: usize) -> Result<Self> {
        Self::build(self.kernel, self.exponent, classes, self.epsilon)
    }

    pub fn kernel(&self) -> &MemoryKernel<T> {
        &self.kernel
    }

    pub fn exponent(&self) -> Exponent<T> {
        self.exponent
    }

    pub fn class_count(&self) -> usize {
        self.calibration.class_count
    }

    pub fn alpha(&self) -> T {
        self.calibration.alpha
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn calibration(&self) -> &CalibrationResult<T> {
        &self.calibration
    }

    fn check_state(&self, q: &QState<T>) -> Result<()> {
        if q.class_count() != self.class_count() {
            return Err(TalError::Dimension { expected: self.class_count(), got: q.class_count() });
        }
        Ok(())
    }

    /// `α · max(s_k, ε)` for every class.
    pub fn negative_weights(&self, q: &QState<T>) -> Result<Vec<T>> {
        self.check_state(q)?;
        let q_max = self.kernel.q_max();
        Ok(q.values()
            .iter()
            .map(|&qk| {
                let s = crate::kernel::sensitivity(qk, q_max, self.exponent);
                self.alpha() * s.max(self.epsilon)
            })
            .collect())
    }

    /// `ℓ_k = ln(α · max(s_k, ε))`.
    pub fn log_weights(&self, q: &QState<T>) -> Result<Vec<T>> {
        Ok(self.negative_weights(q)?.into_iter().map(|w| w.ln()).collect())
    }
}

/// Mean loss over the batch, per-sample losses and `∂loss/∂z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: T,
    pub per_sample: Vec<T>,
    pub grad_logits: Array2<T>,
}

fn validate<T: Scalar>(logits: &ArrayView2<'_, T>, labels: &[usize]) -> Result<()> {
    let (rows, cols) = logits.dim();
    if rows == 0 {
        return Err(TalError::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(TalError::Dimension { expected: rows, got: labels.len() });
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(TalError::NonFinite("logits"));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= cols) {
        return Err(TalError::LabelOutOfRange { label, classes: cols });
    }
    Ok(())
}

/// Softmax cross-entropy over `z + offsets`, where the offset is skipped for
/// the true class. `offsets = None` is plain cross-entropy.
fn shifted_softmax_ce<T: Scalar>(
    logits: &ArrayView2<'_, T>,
    labels: &[usize],
    offsets: Option<&[T]>,
) -> LossOutput<T> {
    let (rows, cols) = logits.dim();
    let inv_n = T::one() / T::from_count(rows);
    let mut grad = Array2::<T>::zeros((rows, cols));
    let mut per_sample = Vec::with_capacity(rows);
    let mut shifted = vec![T::zero(); cols];
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        for (k, (dst, &z)) in shifted.iter_mut().zip(row.iter()).enumerate() {
            *dst = match offsets {
                Some(off) if k != y => z + off[k],
                _ => z,
            };
        }
        let max = shifted.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in shifted.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        per_sample.push(max + total.ln() - row[y]);
        let mut grad_row = grad.row_mut(i);
        for (k, (g, &e)) in grad_row.iter_mut().zip(shifted.iter()).enumerate() {
            let p = e / total;
            *g = if k == y { (p - T::one()) * inv_n } else { p * inv_n };
        }
    }
    let loss = per_sample.iter().copied().sum::<T>() * inv_n;
    LossOutput { loss, per_sample, grad_logits: grad }
}

/// Temporal-adjusted loss against a fixed `Q` snapshot.
pub fn tal_forward<T: Scalar>(
    config: &TalConfig<T>,
    logits: ArrayView2<'_, T>,
    labels: &[usize],
    q_snapshot: &QState<T>,
) -> Result<LossOutput<T>> {
    validate(&logits, labels)?;
    if logits.ncols() != config.class_count() {
        return Err(TalError::Dimension { expected: config.class_count(), got: logits.ncols() });
    }
    let log_weights = config.log_weights(q_snapshot)?;
    Ok(shifted_softmax_ce(&logits, labels, Some(&log_weights)))
}

/// Mean softmax cross-entropy.
pub fn ce_forward<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[usize]) -> Result<LossOutput<T>> {
    validate(&logits, labels)?;
    Ok(shifted_softmax_ce(&logits, labels, None))
}

/// Per-class positive counts of a label batch.
pub fn label_histogram(labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or(TalError::LabelOutOfRange { label: y, classes })? += 1;
    }
    Ok(counts)
}

/// Loss against the pre-update `Q`, then the batched `Q` advance.
pub fn training_step<T: Scalar>(
    config: &TalConfig<T>,
    q_state: &QState<T>,
    logits: ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<(LossOutput<T>, QState<T>)> {
    let output = tal_forward(config, logits, labels, q_state)?;
    let counts = label_histogram(labels, config.class_count())?;
    let next = update_batched(q_state, config.kernel(), config.exponent(), &counts, labels.len())?;
    Ok((output, next))
}
