pub mod active;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod strategy;
pub mod toy;

pub use error::{AosError, Result};
