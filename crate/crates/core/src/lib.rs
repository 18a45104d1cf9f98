//! Numerical laboratory for the inviscid dyadic shell model of the Euler
//! equations: shell-system simulation, energy-cascade and regularity
//! diagnostics, and numerical verification of the closed-form Gronwall
//! envelopes behind the model's regularity bound.
//!
//! Modules:
//! - [`model`] — the shell systems, variable transforms, scaling map, energy
//! - [`integrator`] — adaptive 5(4) pair with dense output, events,
//!   positivity preservation, plus an exponential fixed-step mode
//! - [`diagnostics`] — norms, flux, energy-balance residuals, distances, fits
//! - [`certificate`] — the closed-form envelope bounds and their verifier
//! - [`harness`] — config files, scenarios, CSV/JSON artifacts, the CLI core

pub mod certificate;
pub mod diagnostics;
pub mod harness;
pub mod integrator;
pub mod model;
pub mod quad;

pub use integrator::{
    integrate, integrate_split, CrossingDirection, CrossingEvent, IntegrationStatus,
    IntegratorConfig, IntegratorError, PositivityMode, QuadWatch, Trajectory,
};
pub use model::{
    a_to_c, c_to_a, energy, rescale, rhs_b, rhs_c, rhs_dyadic, rhs_galerkin_flux, BIndexing,
    GalerkinSpec, ModelError, ModelParams, ScalingMap, ShellState, VariableKind,
};
