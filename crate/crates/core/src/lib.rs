//! Causal physics-informed neural networks for Euler-Bernoulli and
//! Timoshenko beams on Winkler foundations, with checkpoint warm starts.

pub mod beams;
pub mod colloc;
pub mod error;
pub mod fdcheck;
pub mod jetdiff;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
