//! Numerical laboratory for one-dimensional branched transport with a weak
//! fractional Sobolev penalty on the boundary measure.

pub mod constructions;
pub mod dimension;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod fixtures;
pub mod line;
pub mod measure;
pub mod optimizer;
pub mod pattern;
pub mod series;
pub mod spectral;
pub mod transport;
pub mod validate;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
