//! File formats and subcommands of the `qpat` command-line tool.

pub mod arrayfile;
pub mod commands;
pub mod config;
pub mod digest;
pub mod error;
pub mod pgm;
pub mod tracefile;
