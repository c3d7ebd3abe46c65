//! Level-2 rough paths over dyadic polygonal approximations of Brownian
//! motion, p-variation metrics, rough integration, Wong–Zakai solving and a
//! Monte Carlo harness for moment and rate estimates.

pub mod cli;
pub mod error;
pub mod integration;
pub mod lift;
pub mod malliavin;
pub mod paths;
pub mod report;
pub mod solver;
pub mod stats;
pub mod tensor;
pub mod verifier;
pub mod variation;

pub use error::{Error, Result};
pub use tensor::GroupTensor2;
