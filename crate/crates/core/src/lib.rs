pub mod benchmark;
pub mod cadx;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod metrics;
pub mod reid;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
