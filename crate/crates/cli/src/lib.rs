#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Command-line pipeline around the `fieldshift` library.

pub mod commands;
pub mod config;
mod error;

pub use config::RunConfig;
pub use error::CliError;
