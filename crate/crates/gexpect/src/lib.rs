//! Numerical stochastic calculus under volatility uncertainty.
//!
//! The crate evaluates robust (sublinear) expectations induced by a
//! volatility band [sigma_lo, sigma_hi]:
//!
//! * finite scenario spaces, coherent risk measures and the measure-set
//!   representation ([`sublinear`]);
//! * monotone finite-difference solvers for the generating heat-type,
//!   drift and HJB equations ([`pde`]);
//! * band-normal and interval-maximal laws with convex/concave Gaussian
//!   fast paths ([`gnormal`]);
//! * exact discrete-time worst-case dynamic programming: conditional
//!   expectations, discrete stochastic integrals, quadratic variation and
//!   martingale diagnostics ([`tree`]);
//! * scenario-based path simulation under volatility controls ([`sim`]);
//! * SDE/BSDE solvers by Picard iteration and superhedging bid-ask
//!   quotes ([`sde`]).

// Validation guards are written as negated comparisons (`!(t > 0.0)`) so
// that NaN inputs fail them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod cli;
pub mod config;
pub mod error;
pub mod gnormal;
pub mod grid;
pub mod normal;
pub mod payoff;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod sim;
pub mod sublinear;
pub mod tree;

pub use band::{MeanBand, VolBand};
pub use error::{Error, Result};
pub use grid::{GridSpec, GridSpec2d, SolveResult};
pub use payoff::{Payoff, ShapeHint};
