//! Kernel least-squares temporal difference estimation on dyadic Markov
//! reward processes, with the matching critical-radius theory and
//! constructive lower-bound families.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod kernel;
pub mod lowerbound;
pub mod mrp;
pub mod theory;
pub mod walsh_basis;

pub use error::{Error, Result};
