pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod corpus;
pub mod vocab;
pub mod lm;
pub mod constraints;
pub mod parallel;
pub mod sampler;
pub mod discretizer;
pub mod tasks;
pub mod metrics;
pub mod cli;
