//! Library surface of the command-line front end; the binary in
//! `main.rs` is a thin wrapper so integration tests can drive the same
//! code paths directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod figure;
pub mod manifest;
