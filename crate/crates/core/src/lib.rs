pub mod error;
pub mod infer;
pub mod modelfit;
pub mod mvnquad;
pub mod respprob;
pub mod simharness;
pub mod special;
pub mod trialdata;

pub use error::{Error, Result};
