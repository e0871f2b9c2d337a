//! HTTP service, fixture site server and engine setup for the CLI.

pub mod api;
pub mod fixture_server;
pub mod setup;
