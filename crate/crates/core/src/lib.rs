//! Numerical toolkit for the quadratic Schrödinger bridge (entropic optimal
//! transport) on uniform one-dimensional grids.
//!
//! The crate is organised bottom-up:
//!
//! - [`weakconvex`]: the tanh profile `f_L`, distance-bucketed convexity
//!   envelopes of gradients and envelope certification.
//! - [`fixedpoint`]: the maps `F`/`G`, the smallest fixed point `alpha_psi`
//!   and the closed-form bracket around it.
//! - [`grid`] and [`heatflow`]: grid functions, the log-heat (Cole–Hopf)
//!   operator, HJB propagation and a Crank–Nicolson backward Kolmogorov solver.
//! - [`schrodinger`]: log-domain Sinkhorn for the Schrödinger system, the
//!   static bridge, its conditionals and certification of the potential
//!   envelopes.
//! - [`couplingsim`]: Monte Carlo for reflection couplings along HJB
//!   characteristics and the h-transform representation of the bridge.
//! - [`lsi`]: the log-Sobolev constant of the bridge and empirical checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod couplingsim;
pub mod error;
pub mod fixedpoint;
pub mod grid;
pub mod heatflow;
pub mod lsi;
pub mod potentials;
pub mod schrodinger;
pub mod weakconvex;

mod par;

pub use error::{Error, Result};
pub use grid::{Grid1D, GridFunction};
