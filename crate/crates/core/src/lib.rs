pub mod error;
pub mod geometry;
pub mod signal;
pub mod correlation;
pub mod datagen;
pub mod network;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
