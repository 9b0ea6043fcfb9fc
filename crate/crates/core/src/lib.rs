//! Bilateral payment channels over a hash-linked, dual-signed transaction
//! stream.
//!
//! Transactions travel through an in-process partitioned log
//! ([`event_log`]) to channel nodes ([`node`]) that rebuild exact order from
//! hash pointers, keep balances and emit checkpoints. Checkpoints, disputes
//! and hashed timelocks settle against a simulated escrow contract
//! ([`escrow`]). [`sim`] drives whole scenarios deterministically and checks
//! nodes against an independent replay.

pub mod escrow;
pub mod event_log;
pub mod node;
pub mod protocol;
pub mod sim;

/// Logical clock tick shared by nodes, contracts and the simulator.
pub type Tick = u64;
