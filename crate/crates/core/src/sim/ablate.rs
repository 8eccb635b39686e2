//! Grid over memory parameter and exponent, plus the cross-entropy baseline.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{Experiment, LossKind, LossSettings};
use crate::error::Result;
use crate::metrics::mean_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub lambdas: Vec<f64>,
    pub exponents: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self { lambdas: vec![0.99, 0.995, 0.999, 0.9995], exponents: vec![0.2, 0.5, 1.0, 2.0, 5.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub kind: LossKind,
    /// `None` for the baseline row.
    pub lambda: Option<f64>,
    pub r: Option<f64>,
    /// `r < 1`: outside the range-preserving domain, invariant checks only warn.
    pub relaxed: bool,
    pub a_mean: (f64, f64),
    pub a_last: (f64, f64),
    /// `(seed, A_Mean, A_Last)`.
    pub per_seed: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn baseline(&self) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.kind == LossKind::Ce)
    }

    pub fn cell(&self, lambda: f64, r: f64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.lambda == Some(lambda) && c.r == Some(r))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "loss,lambda,r,relaxed,a_mean,a_mean_std,a_last,a_last_std,seeds")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.kind.label(),
                opt(c.lambda),
                opt(c.r),
                c.relaxed,
                c.a_mean.0,
                c.a_mean.1,
                c.a_last.0,
                c.a_last.1,
                c.per_seed.len()
            )?;
        }
        Ok(())
    }
}

/// Runs the baseline once and every `(λ, r)` cell, each over all seeds.
/// Runs are independent and execute in parallel; results are ordered.
pub fn ablate(base: &Experiment, grid: &AblationGrid, seeds: &[u64]) -> Result<AblationReport> {
    let mut settings = vec![LossSettings { kind: LossKind::Ce, ..base.train.loss }];
    for &lambda in &grid.lambdas {
        for &r in &grid.exponents {
            settings.push(LossSettings { kind: LossKind::Tal, lambda, r, epsilon: base.train.loss.epsilon });
        }
    }
    for s in &settings {
        base.with_loss(*s).validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..settings.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, seed)| base.with_loss(settings[i]).run(seed).map(|r| (r.a_mean(), r.a_last())))
        .collect::<Result<Vec<_>>>()?;
    let cells = settings
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let per_seed: Vec<(u64, f64, f64)> = seeds
                .iter()
                .enumerate()
                .map(|(j, &seed)| {
                    let (m, l) = results[i * seeds.len() + j];
                    (seed, m, l)
                })
                .collect();
            let means: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
            let lasts: Vec<f64> = per_seed.iter().map(|p| p.2).collect();
            let is_tal = s.kind == LossKind::Tal;
            AblationCell {
                kind: s.kind,
                lambda: is_tal.then_some(s.lambda),
                r: is_tal.then_some(s.r),
                relaxed: is_tal && s.r < 1.0,
                a_mean: mean_std(&means),
                a_last: mean_std(&lasts),
                per_seed,
            }
        })
        .collect();
    Ok(AblationReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::data::GaussianTaskParams;
    use crate::sim::train::TrainConfig;

    #[test]
    fn grid_is_exhaustive_with_single_baseline() {
        let base = Experiment {
            data: GaussianTaskParams { classes: 4, tasks: 2, per_class: 20, test_per_class: 10, ..Default::default() },
            train: TrainConfig { epochs_per_task: 1, ..Default::default() },
        };
        let grid = AblationGrid { lambdas: vec![0.99, 0.999], exponents: vec![0.5, 1.0, 2.0] };
        let report = ablate(&base, &grid, &[0, 1]).unwrap();
        assert_eq!(report.cells.len(), 1 + 6);
        assert_eq!(report.cells.iter().filter(|c| c.kind == LossKind::Ce).count(), 1);
        for &l in &grid.lambdas {
            for &r in &grid.exponents {
                let cell = report.cell(l, r).unwrap();
                assert_eq!(cell.relaxed, r < 1.0);
                assert_eq!(cell.per_seed.len(), 2);
            }
        }
        let again = ablate(&base, &grid, &[0, 1]).unwrap();
        assert_eq!(report, again);
    }
}
