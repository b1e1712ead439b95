//! Paired clear/adverse-weather training for semantic segmentation.

mod error;
pub mod image;
pub mod pnm;
pub mod rng;
pub mod dataset;
pub mod experiments;
pub mod embedding;
pub mod losses;
pub mod metrics;
pub mod segmodel;
pub mod trainer;
pub mod weathersim;

pub use error::{Error, Result};
pub use tapegrad;
