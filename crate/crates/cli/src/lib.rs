//! Library side of the `passive-decoy` command-line tool: configuration,
//! subcommands and tabular output.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
