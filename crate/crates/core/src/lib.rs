pub mod cem;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod pou;
pub mod rt0;
pub mod solver;
pub mod spectral;

pub use error::{Error, ErrorCategory, Result};
