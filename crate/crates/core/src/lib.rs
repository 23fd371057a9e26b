pub mod autodiff;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod online;
pub mod segmentation;
pub mod synthetic;

pub use error::{Error, Result};
