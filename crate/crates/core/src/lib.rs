//! Temporal supervision modeling for class-incremental learning.
//!
//! Each class carries a strength `Q_k` that decays exponentially and is
//! pushed up by the class's own samples and down by everyone else's. The
//! temporal-adjusted loss scales each non-true class's share of the softmax
//! denominator by `α (Q_k / Q_max)^r`, so classes that have not been seen
//! recently are shielded from negative supervision. `α` is calibrated so the
//! loss coincides with cross-entropy on a balanced, shuffled stream.
//!
//! The numerical core ([`kernel`], [`calibration`], [`loss`]) is generic over
//! [`Scalar`] (`f32`/`f64`); the aliases below fix it to one precision. The
//! simulator and metrics work in `f64`.
//!
//! ```
//! # fn main() -> tal_core::Result<()> {
//! use ndarray::array;
//! use tal_core::loss::DEFAULT_EPSILON;
//! use tal_core::{training_step, MemoryKernel, QState, TalConfig};
//!
//! let config = TalConfig::new(MemoryKernel::new(0.995)?, 1.0, 3, DEFAULT_EPSILON)?;
//! let q = QState::zeros(3);
//! let logits = array![[2.0, 0.1, -1.0], [0.3, 0.2, 0.1]];
//! let (out, q) = training_step(&config, &q, logits.view(), &[0, 1])?;
//! assert!(out.loss > 0.0);
//! assert_eq!(config.alpha(), 5.0);
//! assert!(q.values()[2] == 0.0 && q.values()[0] > 0.0);
//! # Ok(())
//! # }
//! ```

pub mod bench;
pub mod calibration;
pub mod error;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod scalar;
pub mod sim;
pub mod stream;

pub use calibration::{degeneracy_check, solve_calibration, CalibrationResult, SolveMethod};
pub use error::{Result, TalError};
pub use kernel::{
    q_from_convolution, update_batched, update_plain, update_tal, DecayKernel, Exponent, MemoryKernel,
    Polarity, PolaritySequence, QState, QTrajectory,
};
pub use loss::{ce_forward, tal_forward, training_step, LossOutput, TalConfig};
pub use metrics::MetricsReport;
pub use scalar::Scalar;
pub use stream::{generate_stream, verify_theorem1, SupervisionTrace, TaskSchedule, TaskSpec};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type MemoryKernelF64 = MemoryKernel<f64>;
pub type MemoryKernelF32 = MemoryKernel<f32>;
pub type QStateF64 = QState<f64>;
pub type QStateF32 = QState<f32>;
pub type TalConfigF64 = TalConfig<f64>;
pub type TalConfigF32 = TalConfig<f32>;
pub type LossOutputF64 = LossOutput<f64>;
pub type LossOutputF32 = LossOutput<f32>;
pub type CalibrationF64 = CalibrationResult<f64>;
pub type CalibrationF32 = CalibrationResult<f32>;
