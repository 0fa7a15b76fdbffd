//! Exact computations for comparing two-stage reward-model pipelines with
//! direct preference optimization on finite bandits and token-level MDPs.
//!
//! Everything here is deterministic and allocation-only; file formats, the
//! command line and parallel sweeps live in the `prefgap` crate.

#![no_std]

extern crate alloc;

pub mod bandit;
pub mod classes;
pub mod constructions;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod math;
pub mod optim;
pub mod token_mdp;

pub use error::{Error, Result};
