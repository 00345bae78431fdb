//! Data-driven identification and control of an underactuated soft-arm
//! surrogate.
//!
//! The pipeline fits a lifted linear input/output model to snapshot data
//! (Hankel DMD with control), analyzes its Koopman spectrum, trims it to the
//! highest-power modes, and designs an LQR gain that is deployed open loop to
//! the built-in nonlinear plant. Modules are layered bottom-up:
//!
//! - [`numerics`]: pseudoinverse, biorthonormal eigendecomposition, DARE.
//! - [`plant`]: the nonlinear mass-spring surrogate arm and trajectories.
//! - [`signals`]: training-input generation (Gaussian mixtures, random steps).
//! - [`observables`]: delay/monomial lifting maps and projections.
//! - [`hdmd`]: least-squares model fitting and Koopman spectra.
//! - [`reduce`]: mode selection and projection onto a real reduced basis.
//! - [`control`]: LQR design, open-loop planning, and plant deployment.
//! - [`eval`]: reconstruction-error metrics, sweeps, and pose-error curves.

pub mod error;
pub mod numerics;
pub mod plant;
pub mod signals;
pub mod observables;
pub mod hdmd;
pub mod reduce;
pub mod control;
pub mod eval;

pub use error::{Error, Result};
pub use numerics::{ComplexMatrix, RealMatrix};
