//! Chat-driven virtual network allocation.
//!
//! Users steer per-user CPU and latency-bound parameters with free-text
//! prompts. Each chat step turns prompts into update markers, arbitrates
//! conflicting requests, and re-solves VM placement and routing exactly.

pub mod allocator;
pub mod control;
pub mod eval;
pub mod fixtures;
pub mod intent;
pub mod model;
pub mod session;
