//! Identity-preserving neural style transfer by pixel-space optimization.

pub mod backbones;
pub mod config;
pub mod error;
pub mod face;
pub mod image;
pub mod losses;
pub mod objective;
pub mod optimizer;
pub mod preprocess;
pub mod report;
pub mod schedule;

pub use error::{Error, Result};
