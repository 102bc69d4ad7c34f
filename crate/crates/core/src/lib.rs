//! Balance-regularized two-head neural estimation of individual treatment
//! effects, with a bias/variance/MSE evaluation harness over repeated
//! randomized runs.
//!
//! The crate is organized around a small reverse-mode differentiation engine
//! ([`diffcore`]) on which the shared-bottom two-head model ([`model`]), the
//! balance-regularized objective ([`losses`]) and the Adam optimizer
//! ([`optim`]) are built. [`data`] handles dataset ingestion and the
//! split-and-repeat experimental plan, [`trainer`] runs a single fit,
//! [`estimation`] computes impact estimates and cross-run metrics, and
//! [`harness`] orchestrates full experiments behind the CLI.

pub mod array;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod losses;
pub mod model;
pub mod optim;
pub mod trainer;

pub use array::Array;
pub use error::{Error, Result};
