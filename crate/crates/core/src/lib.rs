pub mod analytics;
pub mod dataset;
pub mod error;
pub mod masks;
pub mod ntl;
pub mod period;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
