//! Numerics for the relativistic kinetic Fokker–Planck operator
//! `∂_p(√(p²+1) ∂_p f) + p ∂_y f + √(p²+1) ∂_t f`.
//!
//! The crate covers the Lorentz group structure of phase space, Hörmander
//! vector fields, Monte Carlo simulation of the associated diffusions,
//! finite-difference solvers for the transformed Kolmogorov equation, the
//! optimal-control value function and Harnack chains, and a feasibility
//! harness for Gaussian-type lower bounds on the fundamental solution.

pub mod error;
pub mod geometry;
pub mod hormander;
pub mod sde;
pub mod pde;
pub mod control;
pub mod harnack;
pub mod bounds;

mod dual;

pub use error::{Error, Result};
pub use geometry::PhasePoint;
