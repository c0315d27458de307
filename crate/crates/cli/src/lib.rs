//! Command implementations and the HTTP service behind the `dualseg` binary.

pub mod commands;
pub mod service;
