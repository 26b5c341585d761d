//! Motion-aware token-level residual caching for chunked flow-matching
//! denoising, with the analyses and experiment harness around it.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod field;
pub mod model;
pub mod policy;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
