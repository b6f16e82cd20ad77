//! Discrete-event simulator for a state-sharded ledger, comparing two ways
//! of handling cross-shard transactions.
//!
//! The baseline chain applies a cross-shard transaction in two phases a
//! block apart, detects inconsistencies after the fact, and repairs them by
//! challenge and rollback; an adversary can exploit that repair path to
//! stall block production. The atomic-block chain has a coordinator pack
//! both phases into one candidate block, shard producers attest to their
//! chunk with cost-modeled validity proofs, and stateless global validators
//! finalize whole blocks, so the repair path (and the stall) never exists.
//!
//! The crate is a library; the `shardsim` binary drives it from scenario
//! files and writes metrics reports.

pub mod attack;
pub mod block;
pub mod digest;
pub mod incentives;
pub mod ledger;
pub mod metrics;
pub mod nightshade;
pub mod params;
pub mod plot;
pub mod roles;
pub mod scenario;
pub mod sim;
pub mod synchro;
pub mod workload;

pub use digest::DigestBytes;
pub use ledger::{AccountId, AssertPolarity, LedgerState, ShardId, Transaction, Yocto};
pub use params::{ProofPolicy, SimulationParams};
pub use roles::RoleId;
