//! Counterfactual-consistent reinforcement-learning recommendation.

pub mod critic;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod rl;
pub mod rng;
pub mod runner;
pub mod scm;

pub use error::{Error, Result};
