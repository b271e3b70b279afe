//! Jacobians, differentials and measure factors of the Moore-Penrose inverse
//! `Y = X⁺`, for full-rank and rank-deficient `X`, together with independent
//! numerical oracles that check each formula.

pub mod chart;
pub mod differential;
pub mod error;
pub mod harness;
pub mod matcore;
pub mod measures;
pub mod report;

pub use error::{Error, Result};
pub use matcore::{Matrix, Rng};
pub use report::VerificationReport;
