//! Command line, file formats and parallel sweeps on top of `prefgap-core`.

pub mod cli;
pub mod error;
pub mod output;
pub mod plot;
pub mod reproduce;
pub mod sweep;
pub mod verify;

pub use error::AppError;
