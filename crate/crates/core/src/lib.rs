pub mod datagen;
pub mod engine;
pub mod error;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
