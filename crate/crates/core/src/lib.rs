pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod intervention;
pub mod model;
pub mod tasks;

pub use error::{Error, Result};
