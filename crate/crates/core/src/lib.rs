//! Authenticated Byzantine consensus that terminates under the combined
//! bisource/winning link assumption, together with a deterministic network
//! simulator, Byzantine strategies, trace checkers and a scenario harness.

pub mod adversary;
pub mod auth;
pub mod checkers;
pub mod engine;
pub mod harness;
pub mod model;
pub mod netsim;
