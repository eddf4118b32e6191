//! Randomized sensor selection for linear Kalman filtering.

pub mod concentration;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod format;
pub mod greedy;
pub mod kalman;
pub mod matrix;
pub mod optimizer;
pub mod sampling;
pub mod system;

pub use error::{Error, Result};
