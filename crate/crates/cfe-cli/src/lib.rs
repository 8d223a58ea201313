//! Library surface of the `cfe` command-line tool: configuration parsing,
//! run/convergence/verify drivers, CSV output and run manifests. The binary
//! in `main.rs` is a thin clap wrapper over [`commands`].

// validations are written as !(x > 0) so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

pub use commands::{cmd_converge, cmd_run, cmd_verify, CheckRow, RunOutcome};
pub use config::RunConfig;
pub use error::CliError;
