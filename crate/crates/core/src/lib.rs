//! Traffic, coverage and mobility predictors for carrier traffic steering,
//! with the synthetic generators and evaluation harness around them.

pub mod cli;
pub mod error;
pub mod flowdata;
pub mod io;
pub mod metrics;
pub mod mlcore;
pub mod mobility;
pub mod predictors;
pub mod radioenv;
pub mod rng;
pub mod steering;

pub use error::{Error, Result};
