//! Constrained cooperative multi-agent actor-critic with risk-aware penalties.

pub mod cmaa2c;
pub mod config;
pub mod critics;
pub mod env;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod occupation;
pub mod risk;

pub use error::{Error, Result};
