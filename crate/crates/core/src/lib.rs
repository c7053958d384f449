//! Simulation toolkit for isolating quadratic Zeeman phase evolution in spin-1 alkali vapors.
//!
//! The pieces fit together as a pipeline:
//!
//! * [`circuit`] solves the H-bridge driven series RLC pulser exactly, piece by piece.
//! * [`coils`] turns coil current into a magnetic field (thin loops, elliptic integrals).
//! * [`atomdata`] maps the field onto linear and quadratic Larmor frequencies.
//! * [`spin`] builds spin-1 rotations, the pulse propagator and the probe observables.
//! * [`montecarlo`] follows thermal atoms through the inhomogeneous pulse field.
//! * [`signal`] synthesizes and fits the probe-stage rotation signal.
//!
//! SI units are used throughout; helpers in [`units`] convert from gauss and Celsius.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomdata;
pub mod circuit;
pub mod coils;
mod elliptic;
pub mod error;
pub mod experiment;
pub mod montecarlo;
mod quadrature;
pub mod signal;
pub mod spin;
pub mod units;
pub mod vec3;

pub use error::{Error, Result};
