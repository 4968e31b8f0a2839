//! Command-line front end and JSON-over-HTTP service for eigenflow sessions.

pub mod cli;
pub mod server;
