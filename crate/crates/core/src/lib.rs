pub mod backbone;
pub mod cli;
pub mod config;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod ctc;
pub mod rng;
pub mod switching;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
