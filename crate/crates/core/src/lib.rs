//! Desk-scale retrieval-augmented generation trained end to end by
//! stochastic expected-utility maximization.

pub mod cli;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
