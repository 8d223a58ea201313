//! Numerical solver and verification toolkit for continuous
//! coagulation-fragmentation equations on a truncated volume domain.
//!
//! The crate discretizes the size distribution on a pivot grid over (0, R],
//! assembles the reaction terms for three truncation variants (conservative,
//! non-conservative coagulation with conservative fragmentation, and fully
//! non-conservative), integrates them with explicit positivity-guarded
//! steppers, and tracks the boundary mass-loss integral in a ledger so the
//! vanishing of truncation-induced mass loss can be demonstrated for linearly
//! bounded kernels and contrasted with gelling ones.
//!
//! All numerics are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! concrete `f64` aliases live at the crate root.

// validations are written as !(x > 0) so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod kernels;
pub mod oracles;
pub mod scalar;
pub mod schemes;

pub use error::{CfeError, Result};
pub use scalar::{real, Scalar};

/// f64 instantiations of the core types.
pub type KernelPair64 = kernels::KernelPair<f64>;
pub type VolumeGrid64 = grid::VolumeGrid<f64>;
pub type DensityState64 = schemes::DensityState<f64>;
pub type RhsBreakdown64 = schemes::RhsBreakdown<f64>;
pub type StepControl64 = integrator::StepControl<f64>;
pub type Trajectory64 = integrator::Trajectory<f64>;
pub type MassLedger64 = diagnostics::MassLedger<f64>;
pub type ConvexWeight64 = diagnostics::ConvexWeight<f64>;
pub type TestFunction64 = diagnostics::TestFunction<f64>;
pub type OracleCase64 = oracles::OracleCase<f64>;
