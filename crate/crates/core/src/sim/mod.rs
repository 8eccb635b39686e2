//! Desk-scale class-incremental simulation.

pub mod ablate;
pub mod classifier;
pub mod data;
pub mod train;

pub use ablate::{ablate, AblationCell, AblationGrid, AblationReport};
pub use classifier::Classifier;
pub use data::{make_gaussian_tasks, GaussianTaskParams, SyntheticDataset};
pub use train::{train_incremental, Experiment, LossKind, LossSettings, TrainConfig, TrainState};
