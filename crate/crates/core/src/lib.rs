pub mod autograd;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod head;
pub mod image;
pub mod model;
pub mod nn;
pub mod neck;
pub mod ops;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
