//! Command implementations and the HTTP service behind the `leadprice` binary.

pub mod commands;
pub mod server;
