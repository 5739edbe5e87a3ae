//! Continuous-exposure low-light raw enhancement.

pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod raw;
pub mod sensor;

pub use error::{Error, Result};
