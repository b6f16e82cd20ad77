//! Trust standings and block rewards.
//!
//! Both ledgers key roles by their stable key string. Trust tracks two
//! counters per role: merits, earned for each finalized block the role
//! contributed to, and faults, charged when a role's work is rejected (a
//! coordinator's block thrown out, a producer's proof failing
//! verification). Leadership rotates among the roles with the fewest
//! faults, so a misbehaving role drops out of rotation after its first
//! offense while honest roles keep alternating. Merits break ties when a
//! validator decides which producer to ask first. Reward tokens are minted
//! per finalized block, outside the simulated token supply, so they never
//! feed back into balance conservation.

use crate::digest::DigestBytes;
use crate::roles::RoleId;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, Default)]
pub struct TrustLedger {
    merits: BTreeMap<String, u64>,
    faults: BTreeMap<String, u64>,
}

impl TrustLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn score(&self, role: &RoleId) -> u64 {
        self.merits.get(&role.key()).copied().unwrap_or(0)
    }

    pub fn fault_count(&self, role: &RoleId) -> u64 {
        self.faults.get(&role.key()).copied().unwrap_or(0)
    }

    pub fn bump(&mut self, role: &RoleId) {
        *self.merits.entry(role.key()).or_insert(0) += 1;
    }

    pub fn punish(&mut self, role: &RoleId) {
        *self.faults.entry(role.key()).or_insert(0) += 1;
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.merits.clone()
    }

    /// Roles in good standing: everyone sharing the minimum fault count,
    /// in the order given.
    pub fn leaders<'a>(&self, candidates: &'a [RoleId]) -> Vec<&'a RoleId> {
        let best = candidates.iter().map(|r| self.fault_count(r)).min().unwrap_or(0);
        candidates.iter().filter(|r| self.fault_count(r) == best).collect()
    }
}

#[derive(Clone, Debug)]
pub struct RewardLedger {
    pub reward_per_block: u64,
    balances: BTreeMap<String, u64>,
    credited: BTreeSet<(DigestBytes, String)>,
}

impl RewardLedger {
    pub fn new(reward_per_block: u64) -> Self {
        RewardLedger { reward_per_block, balances: BTreeMap::new(), credited: BTreeSet::new() }
    }

    /// Credit a role for one finalized block. Idempotent per (block, role):
    /// a role can earn at most one reward per block no matter how often the
    /// block is reprocessed.
    pub fn credit(&mut self, block: DigestBytes, role: &RoleId) -> bool {
        if !self.credited.insert((block, role.key())) {
            return false;
        }
        *self.balances.entry(role.key()).or_insert(0) += self.reward_per_block;
        true
    }

    pub fn balance(&self, role: &RoleId) -> u64 {
        self.balances.get(&role.key()).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.balances.clone()
    }
}
