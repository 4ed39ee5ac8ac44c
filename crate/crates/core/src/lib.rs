//! Certified small-signal L2-gain bounds for input-affine systems.
//!
//! A storage function is represented as a continuous piecewise-affine (CPA)
//! interpolant on a simplicial mesh, optionally combined with a quadratic
//! piece near the origin. Gain conditions are written as linear matrix
//! inequalities on vertex values and solved as a semidefinite program.

#[cfg(feature = "clarabel")]
extern crate openblas_src;

pub mod analysis;
pub mod check;
pub mod cpa;
pub mod error;
pub mod geometry;
pub mod interval;
pub mod lmi;
mod par;
pub mod sdp;
pub mod system;

pub use error::{Error, Result};
