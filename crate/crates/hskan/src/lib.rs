//! File formats, checkpoints, logs and the command-line driver around
//! [`hskan_core`].

pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod formats;
pub mod logs;

pub use error::{Error, Result};
