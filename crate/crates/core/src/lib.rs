//! Operator-guided deterministic inversion for simultaneous multi-slice (SMS)
//! MRI k-space reconstruction.
//!
//! The collapsed SMS measurement is separated slice by slice with two chained
//! deterministic reverse chains: Stage-M removes the CAIPI-modulated
//! interference of the other slices, Stage-U completes the in-plane
//! undersampled k-space under data-consistency and low-frequency anchor
//! projections. Degradation predictors are pluggable: an exact oracle, a
//! calibrated linear (slice-GRAPPA) estimator, or an external process speaking
//! the `OCDI-PRED v1` wire protocol.

pub mod baselines;
pub mod bundle;
pub mod config;
pub mod error;
pub mod inference;
pub mod kspace;
pub mod metrics;
pub mod operators;
pub mod predictors;
pub mod protocol;
pub mod simulation;
pub mod tensorfile;
pub mod trajectory;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use kspace::{ComplexGrid, MagnitudeImage, MultiCoilKSpace, SliceStack, C64};
pub use operators::{CaipiScheme, Degradation, SamplingMask, Stage};
pub use trajectory::{Schedule, StepInfo, TrajectoryState};
