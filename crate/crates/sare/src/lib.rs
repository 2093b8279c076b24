//! File formats, experiment orchestration and the command line for
//! [`sare_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use error::{Error, Result};
