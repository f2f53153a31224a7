//! Command line, configuration and file formats around `ufo-core`.
//!
//! Each subcommand of the `ufo` binary is a method on [`commands::Context`];
//! all artifacts live under a single workdir described by
//! [`commands::Layout`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod manifest;

pub use commands::{Context, Layout, Outcome};
pub use config::ExperimentConfig;
pub use error::{exit, CliError, Result};
