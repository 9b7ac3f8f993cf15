//! HTTP API and command-line front end for the `keycov` library.

pub mod api;
pub mod cli;
pub mod config;
