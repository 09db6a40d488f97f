//! Solvers, functionals and critical-mass experiments for a chemotaxis
//! model whose species carry signed sensitivities distributed by a measure.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common double-precision instantiation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubbles;
pub mod checks;
pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod greens;
pub mod grid;
pub mod linalg;
pub mod measure;
pub mod scalar;
pub mod snapshot;

pub use dynamics::{Regime, SimConfig, SimState, TimeStep, Trajectory, Variant};
pub use error::{Error, Result};
pub use functionals::FunctionalReport;
pub use greens::GreenOperator;
pub use grid::{Field, Geometry, Grid, SpeciesDensity};
pub use measure::{Atom, AverageCriticalMass, SpeciesMeasure};
pub use scalar::Scalar;

pub type Grid64 = Grid<f64>;
pub type Field64 = Field<f64>;
pub type Measure64 = SpeciesMeasure<f64>;
pub type Density64 = SpeciesDensity<f64>;
pub type Green64 = GreenOperator<f64>;
pub type SimConfig64 = SimConfig<f64>;
pub type Grid32 = Grid<f32>;
pub type Field32 = Field<f32>;
pub type Measure32 = SpeciesMeasure<f32>;
pub type Green32 = GreenOperator<f32>;
