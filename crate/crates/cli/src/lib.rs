//! Command-line tooling for cyberlog: HTTP services for the claim database
//! and monitors, a blocking HTTP client, and the subcommand implementations.

pub mod client;
pub mod commands;
pub mod server;
