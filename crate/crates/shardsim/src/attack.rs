//! The block-interference attack: repeated cross-shard deposits into a
//! contract that refuses them.
//!
//! Each round sends one deposit. On the two-phase chain the deposit debits
//! the attacker, the contract refuses the receipt a block later, and the
//! resulting inconsistency forces a challenge and a rollback; the attacker
//! pays only gas per round. Rounds are re-armed after each rollback, so one
//! round occupies three block slots. On the atomic-block chain the
//! coordinator observes the refusal while assembling and drops the deposit
//! before it can half-apply.

use crate::ledger::{AccountId, Transaction, TxKind, Yocto};

#[derive(Clone, Debug, PartialEq)]
pub struct AttackPlan {
    pub attacker: AccountId,
    pub contract: AccountId,
    pub deposit: Yocto,
    pub gas: Yocto,
    pub rounds: u32,
    pub start_us: u64,
}

impl AttackPlan {
    /// The round's deposit transaction. The nonce makes every round a fresh
    /// transaction even though amount and target never change.
    pub fn deposit_tx(&self, round: u32) -> Transaction {
        Transaction::new(
            self.attacker.clone(),
            self.contract.clone(),
            self.deposit,
            self.gas,
            TxKind::ContractCall { method: "send".into() },
            round as u64,
        )
    }

    /// One full round on the two-phase chain: the deposit's block, the
    /// block that reverts the receipt, and the slot the rollback consumes.
    pub fn round_period_us(&self, t_block_us: u64) -> u64 {
        3 * t_block_us
    }
}
