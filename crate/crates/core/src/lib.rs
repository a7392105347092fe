pub mod error;
pub mod splitter;
pub mod tensor;
pub mod model;
pub mod train;
pub mod infer;
pub mod metrics;

pub use error::{Error, Result};
