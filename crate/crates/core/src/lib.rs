pub mod ccm;
pub mod cli;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod domain;
pub mod error;
pub mod eval;
pub mod generator;
pub mod gradcheck;
pub mod maskgen;
pub mod nn;
pub mod objectives;
pub mod sam;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
