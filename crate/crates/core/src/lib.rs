//! Bidirectional average-velocity flow matching.
//!
//! A single network `u(x, t, t')` predicts the average velocity of a
//! flow-matching ODE over the interval between `t` and `t'` in either time
//! direction, which gives one-step and few-step generation, inversion,
//! reconstruction and condition-swap editing from the same model.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod sampler;

pub use error::{Error, Result};
