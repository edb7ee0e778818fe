pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod ssm;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
