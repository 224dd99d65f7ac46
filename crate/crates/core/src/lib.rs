pub mod audio;
pub mod cache;
pub mod cli;
pub mod container;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod openset;
pub mod seeds;
pub mod siamese;
pub mod synth;

pub use error::{Error, Result};
