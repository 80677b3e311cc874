//! Cascaded model predictive control of a tandem-rotor helicopter.
//!
//! The outer loop regulates an SE2(3) tracking error at a slow rate and emits
//! an optimal angular-velocity sequence; the inner loop linearizes the
//! rotational dynamics about that sequence and tracks it with rotor torque.
//! A single 12-state controller is provided as the baseline, together with a
//! nonlinear truth model and a Monte-Carlo harness comparing the two.

pub mod cascade;
pub mod error;
pub mod harness;
pub mod lie;
pub mod linalg;
pub mod linmodel;
pub mod mpc;
pub mod qpsolve;
pub mod reference;
pub mod vehicle;
pub mod verify;

pub use error::{Error, Result};
