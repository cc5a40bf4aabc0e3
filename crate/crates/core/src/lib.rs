//! Spectral Galerkin laboratory for the 2D incompressible Navier-Stokes
//! equations on a rectangle with additive noise.
//!
//! The library covers the full experiment pipeline:
//!
//! * [`spectral`]: divergence-free sine eigenbasis, norms, and the dealiased
//!   advection form `b(u, v, w)` with its Galerkin projection.
//! * [`noise`]: two-sided mode-diagonal Wiener paths from a counter-based
//!   generator, so shifted and regenerated paths are bit-identical.
//! * [`ou`]: per-mode Ornstein-Uhlenbeck transform of a path, stationary
//!   initialisation, ergodic diagnostics, and the damping search.
//! * [`solver`]: exponential and IMEX steppers for the transformed velocity
//!   equation, plus energy-balance validators.
//! * [`cocycle`]: the random dynamical system map built from solver plus
//!   noise transform, with its composition checks.
//! * [`attractor`]: weighted absorbing radii, decay-class diagnostics,
//!   pullback ensemble experiments and Hausdorff distances.

pub mod attractor;
pub mod cocycle;
pub mod error;
pub mod noise;
pub mod ou;
pub mod rng;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
