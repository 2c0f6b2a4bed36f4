//! Markov-model transaction prediction for partitioned OLTP stored procedures.

pub mod bundle;
pub mod catalog;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod mapping;
pub mod markov;
pub mod par;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
