//! Verifiable event extensions piggybacked on vehicular ITS messages.
//!
//! The crate bundles the extension codec and engine, the ledger, consensus
//! and token modules that extensions carry, three event sub-protocols, a
//! deterministic discrete-event network simulator, and closed-form delay
//! and overhead analytics used to check the simulator.

pub mod analytics;
pub mod cli;
pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod ledger;
pub mod output;
pub mod scenario;
pub mod simnet;
pub mod subprotocols;
pub mod token;
pub mod types;
pub mod vep;

pub use types::*;
