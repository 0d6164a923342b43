//! HTTP gateway and command-line front end.

pub mod cli;
pub mod gateway;
