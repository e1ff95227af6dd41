//! Objective Bayesian variable selection for probit occupancy models.

pub mod aic;
pub mod chib;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod marginals;
pub mod model_space;
pub mod optim;
pub mod par;
pub mod posterior;
pub mod probit;
pub mod rng;
pub mod search;
pub mod sim;

pub use error::{Error, Result};
