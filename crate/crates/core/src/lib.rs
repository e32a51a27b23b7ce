//! Stokes-flow swimmers made of rigid spheres on telescopic arms.
//!
//! The crate computes the hydrodynamic mobility of three swimmer families with a collocation
//! boundary-element method, integrates their self-propelled motion, checks the Lie-bracket rank
//! condition for controllability, and optimizes strokes for minimal dissipated energy.

pub mod bem;
pub mod controllability;
pub mod dynamics;
pub mod error;
pub mod farfield;
pub mod geometry;
pub mod optimizer;
pub mod spline;

pub use error::{Error, Result};
pub use geometry::{Position, State, SwimmerKind, SwimmerModel};
