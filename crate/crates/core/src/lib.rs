//! Time-lapse gravity workbench for CO₂ storage monitoring.
//!
//! The crate covers the full primary toolchain:
//!
//! - [`grid`]: reservoir voxel grids, scalar fields, sensor layouts, gravity maps.
//! - [`geo`]: geostatistical porosity/permeability realizations, a parametric
//!   plume filler, and the saturation-to-density conversion.
//! - [`forward`]: the vertical-gravity forward operator and its adjoint.
//! - [`inversion`]: mask-constrained CGLS inversion and refinement of learned
//!   predictions.
//! - [`metrics`]: model/data misfit, R², Dice, generalized Dice loss, class weights.
//! - [`dataset`]: the on-disk sample format, z-scoring, splits, sequence windows.
//! - [`cli`]: the `plumegrav` command-line front end.
//!
//! Data-parallel loops go through [`par::Exec`]; with the `parallel` feature
//! disabled every path runs sequentially.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod forward;
pub mod geo;
pub mod grid;
pub mod inversion;
pub mod metrics;
pub mod par;

pub use error::{Error, Result};
pub use forward::{ForwardOperator, KernelMode};
pub use grid::{FieldKind, GravityMap, ReservoirGrid, SensorGrid, VolumeField};
