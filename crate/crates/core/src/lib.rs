pub mod error;
pub mod histogram;
pub mod image_io;
pub mod localize;
pub mod metrics;
pub mod noise;
pub mod nonparametric;
pub mod parametric;
pub mod solver;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
