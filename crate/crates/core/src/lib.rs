pub mod cli;
pub mod config;
pub mod convnet;
pub mod csi;
pub mod distill;
pub mod error;
pub mod fewshot;
pub mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
