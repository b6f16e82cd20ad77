//! Protocol role identities.
//!
//! A role's key string doubles as its signing key for the keyed-digest
//! signatures used throughout the simulator, and as its key in the trust
//! and reward ledgers.

use crate::ledger::ShardId;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoleId {
    Coordinator { index: u32 },
    Producer { shard: ShardId, index: u32 },
    GlobalValidator { index: u32 },
}

impl RoleId {
    pub fn coordinator(index: u32) -> Self {
        RoleId::Coordinator { index }
    }

    pub fn producer(shard: ShardId, index: u32) -> Self {
        RoleId::Producer { shard, index }
    }

    pub fn global_validator(index: u32) -> Self {
        RoleId::GlobalValidator { index }
    }

    /// Stable string form, used as signing key and ledger key.
    pub fn key(&self) -> String {
        match self {
            RoleId::Coordinator { index } => format!("coordinator-{index}"),
            RoleId::Producer { shard, index } => format!("producer-{shard}-{index}"),
            RoleId::GlobalValidator { index } => format!("gv-{index}"),
        }
    }

    /// Inverse of [`RoleId::key`].
    pub fn from_key(key: &str) -> Option<RoleId> {
        let parts: Vec<&str> = key.split('-').collect();
        match parts.as_slice() {
            ["coordinator", i] => Some(RoleId::coordinator(i.parse().ok()?)),
            ["producer", s, i] => Some(RoleId::producer(s.parse().ok()?, i.parse().ok()?)),
            ["gv", i] => Some(RoleId::global_validator(i.parse().ok()?)),
            _ => None,
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}
