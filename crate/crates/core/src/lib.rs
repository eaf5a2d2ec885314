//! Multi-chain script event prediction.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod model;
pub mod nn;
pub mod prepare;
pub mod rng;
pub mod runconfig;
pub mod scoring;
pub mod train;
pub mod types;

pub use error::{Error, Result};
