//! Offline diagnosis toolkit: a symptom classifier and a small residual
//! image classifier, trained from scratch, compressed into a single
//! memory-mappable 8-bit bundle, and served through a top-k inference engine.

pub mod error;
pub mod evalviz;
pub mod infer;
pub mod meddata;
pub mod modelpack;
pub mod nn;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
