//! Command-line front end: file loading, trace formats and subcommands.

pub mod app;
pub mod trace_format;
