//! Spatial graph regression with positional-encoder graph neural networks.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod gnnops;
mod init;
pub mod model;
pub mod moran;
pub mod pipeline;
pub mod posenc;
pub mod spatialgraph;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
