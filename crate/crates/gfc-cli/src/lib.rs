//! Command-line harness: simulation, estimation, forecasting, exposure
//! analysis, validation and run manifests.

pub mod cli;
pub mod error;
pub mod manifest;
pub mod suite;

pub use cli::run;
