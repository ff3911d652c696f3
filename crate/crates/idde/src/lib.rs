//! Linear and nonlinear delay equations with unbounded memory on an
//! exponentially weighted history space, plus the spectral machinery
//! (characteristic roots, pole data, eigenprojectors) that goes with them.

// validation guards are written as !(x > 0.0) so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod functional;
pub mod history;
pub mod io;
pub mod models;
pub mod polyexp;
pub mod resolvent;
pub mod solver;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};
