pub mod cgan;
pub mod cli;
pub mod classify;
pub mod config;
pub mod cptn;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evalharness;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
