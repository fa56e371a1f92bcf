//! Black-box hyperparameter optimization with a non-stationary Gaussian-process
//! surrogate searched by an importance-weighted evolutionary strategy.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod es;
pub mod exec;
pub mod fanova;
pub mod gp;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod space;

pub use error::{Error, Result};
