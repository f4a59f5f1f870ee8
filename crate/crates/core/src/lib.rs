pub mod data;
pub mod error;
pub mod harness;
pub mod memory;
pub mod reasoner;
pub mod retrieval;
pub mod spatial;
pub mod tensor;

pub use error::{Error, Result};
