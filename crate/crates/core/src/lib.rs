//! Identification of switched linear systems `x_{t+1} = A_{w_t} x_t + e_t`
//! with a measured switching signal: per-mode least squares, stability
//! certificates for arbitrary, minimum-dwell and average-dwell switching,
//! closed-form Gramian bounds, finite-sample error bounds, and a
//! Monte-Carlo harness that checks them.
//!
//! The numerics are generic over [`Scalar`] (`f32`/`f64`); the `*64` and
//! `*32` aliases below fix the precision.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod error_bounds;
pub mod estimator;
pub mod experiments;
pub mod gramian_bounds;
pub mod linalg;
pub mod scalar;
pub mod signals;
pub mod stability;
pub mod system;

pub use error::{Error, Result};
pub use error_bounds::{
    burn_in_threshold, class_composed_bound, ls_bound, BoundVariant, ClassCertificate, ErrorBoundParams,
    ErrorBoundReport,
};
pub use estimator::{error_norms, fit, fit_states, partition, LsAccumulator, ModeEstimate, ModeEstimates, ModePartition};
pub use gramian_bounds::{BoundKind, GramianBound};
pub use linalg::{Matrix, Svd};
pub use scalar::Scalar;
pub use signals::{
    AverageDwellParams, GenerationKnobs, SignalClass, SignalClassSpec, SwitchingSignal, ValidationReport,
};
pub use stability::{AverageDwellCertificate, EnvelopeConstants, HorizonCertificate};
pub use system::{simulate, GramianSpectrum, NoiseFamily, NoiseSpec, SwitchedSystem, Trajectory};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type SwitchedSystem64 = SwitchedSystem<f64>;
pub type SwitchedSystem32 = SwitchedSystem<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type AverageDwellParams64 = AverageDwellParams<f64>;
pub type EnvelopeConstants64 = EnvelopeConstants<f64>;
pub type HorizonCertificate64 = HorizonCertificate<f64>;
pub type GramianBound64 = GramianBound<f64>;
pub type ErrorBoundReport64 = ErrorBoundReport<f64>;
pub type ModeEstimates64 = ModeEstimates<f64>;
