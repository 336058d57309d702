//! File formats, the training driver and the command line interface built
//! on `reneus-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod json;
pub mod obj;
pub mod pipeline;

pub use error::{Error, Result};
