//! Numerical laboratory for gauge-controlled normalized Ricci flow of
//! axisymmetric metrics on Sⁿ.

pub mod error;
pub mod sphere;
pub mod metric;
pub mod diffeo;
pub mod stepper;
pub mod spectral;
pub mod flow;
pub mod sample;
pub mod gauge;
pub mod isometry;
pub mod harness;

pub use error::{Error, Result};
