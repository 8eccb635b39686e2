//! TOML experiment specification.
//!
//! Every key is optional; omitted keys take the defaults below and the fully
//! resolved spec is echoed into each run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tal_core::sim::{AblationGrid, Experiment, GaussianTaskParams, LossKind, LossSettings, TrainConfig};
use tal_core::TalError;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    pub classes: usize,
    pub dim: usize,
    pub tasks: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub sep: f64,
    pub noise: f64,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        let d = GaussianTaskParams::default();
        Self {
            classes: d.classes,
            dim: d.dim,
            tasks: d.tasks,
            per_class: d.per_class,
            test_per_class: d.test_per_class,
            sep: d.sep,
            noise: d.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleBlock {
    pub replay_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_units: usize,
    pub q_snapshot_every: usize,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            replay_per_class: GaussianTaskParams::default().replay_per_class,
            epochs: t.epochs_per_task,
            batch_size: t.batch_size,
            lr: t.learning_rate,
            hidden_units: t.hidden_units,
            q_snapshot_every: t.q_snapshot_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossBlock {
    pub kind: LossKind,
    pub lambda: f64,
    pub r: f64,
    pub epsilon: f64,
}

impl Default for LossBlock {
    fn default() -> Self {
        let l = LossSettings::tal(0.995, 1.0);
        Self { kind: l.kind, lambda: l.lambda, r: l.r, epsilon: l.epsilon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationBlock {
    pub lambdas: Vec<f64>,
    pub exponents: Vec<f64>,
}

impl Default for AblationBlock {
    fn default() -> Self {
        let g = AblationGrid::default();
        Self { lambdas: g.lambdas, exponents: g.exponents }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the spec file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetBlock,
    pub schedule: ScheduleBlock,
    pub loss: LossBlock,
    pub ablation: AblationBlock,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            output_dir: None,
            dataset: DatasetBlock::default(),
            schedule: ScheduleBlock::default(),
            loss: LossBlock::default(),
            ablation: AblationBlock::default(),
        }
    }
}

/// A parsed and validated spec together with the digest of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    pub path: PathBuf,
    pub sha256: String,
}

impl LoadedSpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::config(path, format!("cannot read spec: {e}")))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config(path, "spec is not UTF-8"))?;
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| CliError::config(path, e.to_string()))?;
        spec.validate().map_err(|e| CliError::config(path, e.to_string()))?;
        Ok(Self { spec, path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }

    /// `output_dir` from the spec, resolved against the spec's directory.
    pub fn output_dir(&self) -> Option<PathBuf> {
        let dir = self.spec.output_dir.as_ref()?;
        if dir.is_absolute() {
            return Some(dir.clone());
        }
        let base = self.path.parent().unwrap_or(Path::new(""));
        Some(base.join(dir))
    }
}

impl ExperimentSpec {
    pub fn experiment(&self) -> Experiment {
        let (d, s, l) = (&self.dataset, &self.schedule, &self.loss);
        Experiment {
            data: GaussianTaskParams {
                classes: d.classes,
                dim: d.dim,
                tasks: d.tasks,
                per_class: d.per_class,
                test_per_class: d.test_per_class,
                sep: d.sep,
                noise: d.noise,
                replay_per_class: s.replay_per_class,
            },
            train: TrainConfig {
                loss: LossSettings { kind: l.kind, lambda: l.lambda, r: l.r, epsilon: l.epsilon },
                learning_rate: s.lr,
                epochs_per_task: s.epochs,
                batch_size: s.batch_size,
                hidden_units: s.hidden_units,
                q_snapshot_every: s.q_snapshot_every,
            },
        }
    }

    pub fn grid(&self) -> AblationGrid {
        AblationGrid { lambdas: self.ablation.lambdas.clone(), exponents: self.ablation.exponents.clone() }
    }

    pub fn validate(&self) -> Result<(), TalError> {
        if self.seeds.is_empty() {
            return Err(TalError::Precondition("seed list is empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(TalError::Precondition("seed list has duplicates".into()));
        }
        let exp = self.experiment();
        exp.validate()?;
        if self.ablation.lambdas.is_empty() || self.ablation.exponents.is_empty() {
            return Err(TalError::Precondition("ablation grid is empty".into()));
        }
        for &lambda in &self.ablation.lambdas {
            for &r in &self.ablation.exponents {
                exp.with_loss(LossSettings { kind: LossKind::Tal, lambda, r, epsilon: self.loss.epsilon })
                    .validate()?;
            }
        }
        Ok(())
    }

    /// The fully resolved spec as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_takes_defaults() {
        let spec: ExperimentSpec = toml::from_str("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.experiment().data, GaussianTaskParams::default());
        spec.validate().unwrap();
    }

    #[test]
    fn resolved_form_round_trips() {
        let spec: ExperimentSpec = toml::from_str("seeds = [3]\n[loss]\nkind = \"CE\"\n").unwrap();
        let again: ExperimentSpec = toml::from_str(&spec.resolved_toml()).unwrap();
        assert_eq!(spec, again);
        assert_eq!(again.loss.kind, LossKind::Ce);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentSpec>("[loss]\nlamda = 0.9\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let bad = |text: &str| toml::from_str::<ExperimentSpec>(text).unwrap().validate().is_err();
        assert!(bad("seeds = []"));
        assert!(bad("seeds = [1, 1]"));
        assert!(bad("[dataset]\nclasses = 7\ntasks = 5\n"));
        assert!(bad("[loss]\nlambda = 1.5\n"));
        assert!(bad("[ablation]\nlambdas = [0.3]\n"));
    }
}
