//! Per-batch loss timing for cross-entropy against the temporal-adjusted loss.

use std::hint::black_box;
use std::io::{self, Write};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernel::{MemoryKernel, QState};
use crate::loss::{ce_forward, tal_forward, TalConfig, DEFAULT_EPSILON};

pub const BATCH_SIZES: [usize; 4] = [32, 64, 128, 256];
pub const CLASS_COUNTS: [usize; 4] = [5, 20, 100, 500];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub batch: usize,
    pub classes: usize,
    pub ce_ns: f64,
    pub tal_ns: f64,
}

impl BenchRow {
    pub fn overhead_ns(&self) -> f64 {
        self.tal_ns - self.ce_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

impl BenchTable {
    /// Slopes of per-batch time against `N·C` for (CE, TAL).
    pub fn slopes(&self) -> (f64, f64) {
        let x: Vec<f64> = self.rows.iter().map(|r| (r.batch * r.classes) as f64).collect();
        let ce: Vec<f64> = self.rows.iter().map(|r| r.ce_ns).collect();
        let tal: Vec<f64> = self.rows.iter().map(|r| r.tal_ns).collect();
        (slope(&x, &ce), slope(&x, &tal))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "batch,classes,ce_ns,tal_ns,overhead_ns")?;
        for r in &self.rows {
            writeln!(out, "{},{},{:.0},{:.0},{:.0}", r.batch, r.classes, r.ce_ns, r.tal_ns, r.overhead_ns())?;
        }
        Ok(())
    }
}

fn time_per_call(mut f: impl FnMut(), reps: usize, trials: usize) -> f64 {
    // Minimum over trials of the mean per call; least sensitive to interference.
    (0..trials)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..reps {
                f();
            }
            start.elapsed().as_nanos() as f64 / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Times both losses on random batches. `work` is the approximate number of
/// logit entries processed per trial and cell.
pub fn bench_losses(batches: &[usize], classes: &[usize], work: usize, trials: usize, seed: u64) -> Result<BenchTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = MemoryKernel::new(0.995)?;
    let mut rows = Vec::new();
    for &c in classes {
        let config = TalConfig::new(kernel, 1.0, c, DEFAULT_EPSILON)?;
        let q = QState::from_values((0..c).map(|_| rng.random::<f64>() * kernel.q_max()).collect())?;
        for &n in batches {
            let logits = Array2::from_shape_fn((n, c), |_| rng.random::<f64>() * 4.0 - 2.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let reps = (work / (n * c)).max(3);
            let ce_ns = time_per_call(|| drop(black_box(ce_forward(black_box(logits.view()), &labels))), reps, trials);
            let tal_ns = time_per_call(
                || drop(black_box(tal_forward(&config, black_box(logits.view()), &labels, &q))),
                reps,
                trials,
            );
            rows.push(BenchRow { batch: n, classes: c, ce_ns, tal_ns });
        }
    }
    Ok(BenchTable { rows })
}
