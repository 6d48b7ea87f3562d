//! Memory-dimension reduction for sequential generators of classical
//! stochastic processes represented as infinite matrix product states.

pub mod error;
pub mod imps;
pub mod process;
pub mod linalg;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
