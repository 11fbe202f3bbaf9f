//! Asynchronous block-iterative projective splitting for coupled monotone
//! inclusions, together with the warped proximal step it instantiates.

pub mod coupling;
pub mod error;
pub mod errors;
pub mod hilbert;
pub mod linalg;
pub mod operators;
pub mod problems;
pub mod psplit;
pub mod scheduler;
pub mod theorem1;
pub mod warped_core;

pub use error::{Error, Result};
