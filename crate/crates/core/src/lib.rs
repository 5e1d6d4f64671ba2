#![no_std]
//! Numerical core for certifying nonnegativity of binary forms with
//! sum-of-squares Gram matrices and learning those certificates with
//! SL(2,ℝ)- and SO(2,ℝ)-equivariant networks.
//!
//! The crate needs only `alloc`. File formats, dataset generation and the
//! training harness live in the companion `sosnet` crate.

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod models;
pub mod nn;
pub(crate) mod math;
pub mod polycore;
pub mod reptheory;
pub mod soscenter;

pub use error::{Error, Result};
