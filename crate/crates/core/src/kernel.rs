//! Exponential memory kernel and the per-class temporal positive-supervision
//! strength `Q` it induces.
//!
//! `Q_k` is the kernel-weighted sum of class `k`'s polarity history. With the
//! kernel `f[n] = λ^(n+1)` the sum collapses to an O(1) recursion, which is
//! what training uses. The direct convolution is kept as an oracle and accepts
//! any nonincreasing kernel.

use std::io::{self, Write};

use crate::error::{Result, TalError};
use crate::scalar::Scalar;

/// A nonnegative, nonincreasing weight sequence indexed by lag.
pub trait DecayKernel<T: Scalar> {
    /// Residual influence of a sample seen `lag` steps ago.
    fn weight(&self, lag: usize) -> T;
}

/// The decay law `f[n] = λ^(n+1)` with `0 < λ < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryKernel<T> {
    lambda: T,
}

impl<T: Scalar> MemoryKernel<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda > T::zero() && lambda < T::one()) {
            return Err(TalError::InvalidMemory(lambda.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Supremum of `Q` under all-positive supervision, `λ / (1 − λ)`.
    pub fn q_max(&self) -> T {
        self.lambda / (T::one() - self.lambda)
    }

    /// `Q` after `steps` all-positive updates from zero: `Q_max (1 − λ^steps)`.
    pub fn saturation_curve(&self, steps: usize) -> T {
        self.q_max() * (T::one() - pow_usize(self.lambda, steps))
    }

    /// The attenuated update is only range-preserving for `λ ≥ 1/2` (`Q_max ≥ 1`).
    pub fn ensure_training_domain(&self) -> Result<()> {
        if self.lambda < T::lit(0.5) {
            return Err(TalError::CalibrationDomain(format!(
                "memory parameter {} below 0.5 (Q_max < 1)",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> DecayKernel<T> for MemoryKernel<T> {
    fn weight(&self, lag: usize) -> T {
        pow_usize(self.lambda, lag + 1)
    }
}

/// Explicit weight table; lags past the end weigh zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel<T> {
    weights: Vec<T>,
}

impl<T: Scalar> TabulatedKernel<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(TalError::EmptySequence);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(TalError::Precondition("kernel weights must be finite and nonnegative".into()));
        }
        if weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(TalError::Precondition("kernel weights must be nonincreasing".into()));
        }
        Ok(Self { weights })
    }
}

impl<T: Scalar> DecayKernel<T> for TabulatedKernel<T> {
    fn weight(&self, lag: usize) -> T {
        self.weights.get(lag).copied().unwrap_or_else(T::zero)
    }
}

fn pow_usize<T: Scalar>(base: T, exp: usize) -> T {
    // `powi` multiplies repeatedly and loses several ulps for large exponents.
    base.powf(T::from_count(exp))
}

/// Supervision polarity of one step for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Polarity::Positive => T::one(),
            Polarity::Negative => -T::one(),
        }
    }

    pub fn is_positive(self) -> bool {
        self == Polarity::Positive
    }
}

/// Polarity history `a_k[0..N)` of a single class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolaritySequence {
    class_id: usize,
    values: Vec<Polarity>,
}

impl PolaritySequence {
    pub fn new(class_id: usize, values: Vec<Polarity>) -> Self {
        Self { class_id, values }
    }

    /// Builds a sequence from `±1` integers, rejecting anything else.
    pub fn from_signs(class_id: usize, signs: &[i8]) -> Result<Self> {
        let values = signs
            .iter()
            .map(|&s| {
                Polarity::from_sign(s)
                    .ok_or_else(|| TalError::Precondition(format!("polarity {s} is not +1 or -1")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { class_id, values })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn values(&self) -> &[Polarity] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|p| p.is_positive()).count()
    }

    /// `S[n]`: number of positives among steps `0..=n`.
    pub fn cumulative_positives(&self) -> Vec<usize> {
        self.values
            .iter()
            .scan(0usize, |acc, p| {
                *acc += usize::from(p.is_positive());
                Some(*acc)
            })
            .collect()
    }
}

/// Direct evaluation of `Q[N] = Σ_n f[N−1−n] a[n]`.
pub fn q_from_convolution<T: Scalar, K: DecayKernel<T>>(
    kernel: &K,
    seq: &PolaritySequence,
) -> Result<T> {
    if seq.is_empty() {
        return Err(TalError::EmptySequence);
    }
    let n = seq.len();
    Ok(seq
        .values()
        .iter()
        .enumerate()
        .map(|(i, a)| kernel.weight(n - 1 - i) * a.sign::<T>())
        .sum())
}

/// How range violations of `Q` are surfaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangePolicy {
    /// `r ≥ 1`: the range is provably invariant, a violation is a bug.
    Enforce,
    /// `0 < r < 1` (ablation only): violations are logged and tolerated.
    Warn,
}

/// Steepness exponent `r` of the sensitivity weight `w(q) = (q / Q_max)^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent<T> {
    value: T,
    policy: RangePolicy,
}

impl<T: Scalar> Exponent<T> {
    /// Exponent in the range-preserving domain `r ≥ 1`.
    pub fn new(r: T) -> Result<Self> {
        if !(r.is_finite() && r >= T::one()) {
            return Err(TalError::CalibrationDomain(format!("exponent {r} is below 1")));
        }
        Ok(Self { value: r, policy: RangePolicy::Enforce })
    }

    /// Any positive exponent, with range checks demoted to warnings.
    pub fn relaxed(r: T) -> Result<Self> {
        if !(r.is_finite() && r > T::zero()) {
            return Err(TalError::CalibrationDomain(format!("exponent {r} is not positive")));
        }
        let policy = if r >= T::one() { RangePolicy::Enforce } else { RangePolicy::Warn };
        Ok(Self { value: r, policy })
    }

    pub fn value(&self) -> T {
        self.value
    }

    pub fn policy(&self) -> RangePolicy {
        self.policy
    }
}

/// `w(q) = (q / Q_max)^r`. Under [`RangePolicy::Warn`] a negative `q` weighs zero.
pub fn sensitivity<T: Scalar>(q: T, q_max: T, exponent: Exponent<T>) -> T {
    let q = match exponent.policy {
        RangePolicy::Enforce => q,
        RangePolicy::Warn => q.max(T::zero()),
    };
    let ratio = q / q_max;
    if exponent.value == T::one() {
        ratio
    } else {
        ratio.powf(exponent.value)
    }
}

/// Per-class strengths `Q_k` plus the number of updates applied.
///
/// Single writer: one updater advances the state, readers clone snapshots.
/// Each entry carries a low-order correction so long runs near `Q_max` do not
/// drift by more than a few units in the last place.
#[derive(Debug, Clone, PartialEq)]
pub struct QState<T> {
    q: Vec<T>,
    carry: Vec<T>,
    step: u64,
}

impl<T: Scalar> QState<T> {
    pub fn zeros(classes: usize) -> Self {
        Self { q: vec![T::zero(); classes], carry: vec![T::zero(); classes], step: 0 }
    }

    /// Snapshot with explicit values, e.g. a steady state for probing the loss.
    pub fn from_values(q: Vec<T>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(TalError::NonFinite("Q values"));
        }
        let carry = vec![T::zero(); q.len()];
        Ok(Self { q, carry, step: 0 })
    }

    pub fn values(&self) -> &[T] {
        &self.q
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn class_count(&self) -> usize {
        self.q.len()
    }

    /// Appends zero-initialized entries for newly introduced classes.
    pub fn grow(&mut self, additional: usize) {
        self.q.extend(std::iter::repeat_n(T::zero(), additional));
        self.carry.extend(std::iter::repeat_n(T::zero(), additional));
    }

    /// `Q_k / Q_max` for every class.
    pub fn normalized(&self, kernel: &MemoryKernel<T>) -> Vec<T> {
        let q_max = kernel.q_max();
        self.q.iter().map(|&q| q / q_max).collect()
    }

    /// Whether every entry lies in `[0, Q_max]`. The closed upper end admits the
    /// value that all-positive saturation rounds to in finite precision.
    pub fn in_range(&self, kernel: &MemoryKernel<T>) -> bool {
        let q_max = kernel.q_max();
        self.q.iter().all(|&q| q >= T::zero() && q <= q_max)
    }

    fn check_range(&self, kernel: &MemoryKernel<T>, policy: RangePolicy) {
        match policy {
            RangePolicy::Enforce => debug_assert!(
                self.in_range(kernel),
                "Q left [0, Q_max] at step {}: {:?}",
                self.step,
                self.q
            ),
            RangePolicy::Warn => {
                if !self.in_range(kernel) {
                    log::warn!("Q left [0, Q_max] at step {} (exponent below 1)", self.step);
                }
            }
        }
    }
}

fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn fast_two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    (s, b - (s - a))
}

/// `λ (q + δ)` on the pair `(q, carry)`, in double-word arithmetic.
fn scaled_step<T: Scalar>(lambda: T, q: T, carry: T, delta: T) -> (T, T) {
    let (s, e) = two_sum(q, delta);
    let (s, e) = fast_two_sum(s, e + carry);
    let p = lambda * s;
    let pe = lambda.mul_add(s, -p) + lambda * e;
    fast_two_sum(p, pe)
}

impl<T: Scalar> QState<T> {
    fn advance(&self, mut delta: impl FnMut(usize, T) -> T, lambda: T) -> Self {
        let (q, carry) = self
            .q
            .iter()
            .zip(&self.carry)
            .enumerate()
            .map(|(k, (&q, &c))| scaled_step(lambda, q, c, delta(k, q)))
            .unzip();
        Self { q, carry, step: self.step + 1 }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(TalError::Dimension { expected, got });
    }
    Ok(())
}

/// Unattenuated recursion `q' = λ (q + a)`. Can go negative; oracle use only.
pub fn update_plain<T: Scalar>(
    state: &QState<T>,
    kernel: &MemoryKernel<T>,
    polarities: &[Polarity],
) -> Result<QState<T>> {
    check_len(state.class_count(), polarities.len())?;
    Ok(state.advance(|k, _| polarities[k].sign::<T>(), kernel.lambda()))
}

/// Attenuated recursion: positives add `1`, negatives subtract `w(q)`, then scale by `λ`.
pub fn update_tal<T: Scalar>(
    state: &QState<T>,
    kernel: &MemoryKernel<T>,
    exponent: Exponent<T>,
    polarities: &[Polarity],
) -> Result<QState<T>> {
    check_len(state.class_count(), polarities.len())?;
    if exponent.policy == RangePolicy::Enforce {
        kernel.ensure_training_domain()?;
    }
    let q_max = kernel.q_max();
    let next = state.advance(
        |k, q| match polarities[k] {
            Polarity::Positive => T::one(),
            Polarity::Negative => -sensitivity(q, q_max, exponent),
        },
        kernel.lambda(),
    );
    next.check_range(kernel, exponent.policy);
    Ok(next)
}

/// Minibatch form: `q' = λ (q + N_p/N − (N_n/N) s)` with `s = w(q)`.
///
/// With `batch_size == 1` this reproduces [`update_tal`] bit for bit.
pub fn update_batched<T: Scalar>(
    state: &QState<T>,
    kernel: &MemoryKernel<T>,
    exponent: Exponent<T>,
    pos_counts: &[usize],
    batch_size: usize,
) -> Result<QState<T>> {
    check_len(state.class_count(), pos_counts.len())?;
    if batch_size == 0 {
        return Err(TalError::EmptyBatch);
    }
    if let Some(&bad) = pos_counts.iter().find(|&&c| c > batch_size) {
        return Err(TalError::Precondition(format!(
            "positive count {bad} exceeds batch size {batch_size}"
        )));
    }
    if exponent.policy == RangePolicy::Enforce {
        kernel.ensure_training_domain()?;
    }
    let q_max = kernel.q_max();
    let n = T::from_count(batch_size);
    let next = state.advance(
        |k, q| {
            let np = pos_counts[k];
            let pos = T::from_count(np) / n;
            let neg = T::from_count(batch_size - np) / n;
            pos - neg * sensitivity(q, q_max, exponent)
        },
        kernel.lambda(),
    );
    next.check_range(kernel, exponent.policy);
    Ok(next)
}

/// Recorded `Q` snapshots, exportable as `step,class_id,q_value` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTrajectory<T> {
    snapshots: Vec<(u64, Vec<T>)>,
}

impl<T: Scalar> QTrajectory<T> {
    pub fn new() -> Self {
        Self { snapshots: Vec::new() }
    }

    pub fn record(&mut self, state: &QState<T>) {
        self.snapshots.push((state.step(), state.values().to_vec()));
    }

    pub fn snapshots(&self) -> &[(u64, Vec<T>)] {
        &self.snapshots
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,class_id,q_value")?;
        for (step, q) in &self.snapshots {
            for (k, v) in q.iter().enumerate() {
                writeln!(out, "{step},{k},{v}")?;
            }
        }
        Ok(())
    }
}
