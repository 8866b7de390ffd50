//! Discrete active inference: Dirichlet-learned generative models, mean-field
//! state inference, expected free energy policy scoring, and an experiment
//! runtime that drives a synthetic or remotely scored environment.

pub mod agent;
pub mod env;
pub mod error;
pub mod inference;
pub mod learning;
pub mod model;
pub mod policy;
pub mod prob;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
