//! Two-step single-measurement reconstruction for the fractional Calderón
//! problem: Tikhonov recovery of the interior state from exterior data on an
//! observation set, followed by stabilised recovery of the potential.

pub mod assembly;
pub mod coeffrec;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod harness;
pub mod kernel;
pub mod output;
pub mod quadrature;
pub mod staterec;

pub use error::{Error, Result};
