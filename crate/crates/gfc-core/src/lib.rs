//! Generalized forecast and counterfactual estimation on discrete panels.

pub mod dgp;
pub mod error;
pub mod exposure;
pub mod estimate;
pub mod forecast;
pub mod mapping;
pub mod oracle;
pub mod panel;
pub mod paths;
pub mod presets;
pub mod rng;
pub mod tables;
pub mod window;

pub use error::{Error, Result};
