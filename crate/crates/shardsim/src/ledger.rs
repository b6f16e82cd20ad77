//! Sharded account ledger and transaction execution.
//!
//! Accounts live on exactly one shard, determined by hashing the account
//! name. A transaction whose sender and receiver share a shard executes in
//! one step. A cross-shard transaction executes in two phases: phase one
//! debits the sender on its home shard and emits a receipt; the receipt is
//! later executed on the receiver's shard to apply the credit. The receipt
//! can still revert there (a contract may refuse the deposit), which is the
//! half-applied situation the rest of the simulator is built to study.
//!
//! All amounts are integer yocto (10^24 yocto = 1 token); no floating point
//! touches balances. Gas is a flat per-transaction fee that is burned.

use crate::digest::{hash_tagged, DigestBytes, Enc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

pub type Yocto = u128;
pub type ShardId = u32;

pub const YOCTO_PER_TOKEN: Yocto = 1_000_000_000_000_000_000_000_000;

/// Revert reason used by the deposit-refusing contract, matching the
/// message its assertion carries.
pub const REVERT_OVER: &str = "Over";

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub String);

impl AccountId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_string())
    }
}

impl From<String> for AccountId {
    fn from(s: String) -> Self {
        AccountId(s)
    }
}

/// Home shard of an account: leading 64 bits of the name's digest, modulo
/// the shard count.
pub fn shard_of(account: &AccountId, shard_count: u32) -> ShardId {
    assert!(shard_count > 0, "shard count must be positive");
    let d = hash_tagged("account", account.0.as_bytes());
    let prefix = u64::from_be_bytes(d.0[..8].try_into().unwrap());
    (prefix % shard_count as u64) as u32
}

/// Which way the deposit-refusing contract's balance assertion points.
///
/// The written description of the attack has the contract reject a deposit
/// when accepting it would push the balance above the threshold. The
/// published contract source asserts the opposite direction. `Prose` is the
/// default; `Appendix` reproduces the source as printed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertPolarity {
    Prose,
    Appendix,
}

impl Default for AssertPolarity {
    fn default() -> Self {
        AssertPolarity::Prose
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContractKind {
    /// Rejects incoming deposits depending on its balance relative to
    /// `threshold` (see [`AssertPolarity`]).
    AttackContract { threshold: Yocto },
    /// Accepts any deposit.
    SimpleVault,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxKind {
    Transfer,
    ContractCall { method: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    /// Digest of every other field.
    pub id: DigestBytes,
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: Yocto,
    pub gas: Yocto,
    pub kind: TxKind,
    /// Distinguishes otherwise identical transactions from the same sender.
    pub nonce: u64,
}

impl Transaction {
    pub fn new(
        sender: AccountId,
        receiver: AccountId,
        amount: Yocto,
        gas: Yocto,
        kind: TxKind,
        nonce: u64,
    ) -> Self {
        let id = Self::compute_id(&sender, &receiver, amount, gas, &kind, nonce);
        Transaction { id, sender, receiver, amount, gas, kind, nonce }
    }

    pub fn compute_id(
        sender: &AccountId,
        receiver: &AccountId,
        amount: Yocto,
        gas: Yocto,
        kind: &TxKind,
        nonce: u64,
    ) -> DigestBytes {
        let mut enc = Enc::new();
        enc.str(&sender.0);
        enc.str(&receiver.0);
        enc.u128(amount);
        enc.u128(gas);
        match kind {
            TxKind::Transfer => enc.u8(0),
            TxKind::ContractCall { method } => {
                enc.u8(1);
                enc.str(method);
            }
        }
        enc.u64(nonce);
        hash_tagged("tx", &enc.finish())
    }

    pub fn is_cross_shard(&self, shard_count: u32) -> bool {
        shard_of(&self.sender, shard_count) != shard_of(&self.receiver, shard_count)
    }
}

/// Credit carried from a cross-shard transaction's first phase to the
/// receiver's shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    /// Digest of every other field.
    pub id: DigestBytes,
    /// Transaction whose phase one emitted this receipt.
    pub origin_tx: DigestBytes,
    pub target_shard: ShardId,
    pub receiver: AccountId,
    pub amount: Yocto,
    /// Contract method to invoke on delivery; `None` is a plain credit.
    pub call: Option<String>,
    /// Summary of the phase-one outcome.
    pub former_result: String,
}

impl Receipt {
    pub fn new(
        origin_tx: DigestBytes,
        target_shard: ShardId,
        receiver: AccountId,
        amount: Yocto,
        call: Option<String>,
        former_result: String,
    ) -> Self {
        let mut enc = Enc::new();
        enc.digest(&origin_tx);
        enc.u32(target_shard);
        enc.str(&receiver.0);
        enc.u128(amount);
        match &call {
            None => enc.u8(0),
            Some(m) => {
                enc.u8(1);
                enc.str(m);
            }
        }
        enc.str(&former_result);
        let id = hash_tagged("receipt", &enc.finish());
        Receipt { id, origin_tx, target_shard, receiver, amount, call, former_result }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecStatus {
    Applied,
    Reverted(String),
}

/// Result of executing one transaction or receipt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub gas_burned: Yocto,
    /// Signed balance changes, in application order.
    pub state_delta: Vec<(AccountId, i128)>,
}

impl ExecutionOutcome {
    pub fn applied(&self) -> bool {
        self.status == ExecStatus::Applied
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("receipt target {0} not on this shard")]
    UnknownReceiptTarget(AccountId),
}

/// Balances and contract registrations for one shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerState {
    pub shard: ShardId,
    balances: BTreeMap<AccountId, Yocto>,
    contracts: BTreeMap<AccountId, ContractKind>,
    /// Total gas destroyed on this shard. Not part of the state root; the
    /// conservation check adds it back.
    pub gas_burned_total: Yocto,
}

impl LedgerState {
    pub fn new(shard: ShardId) -> Self {
        LedgerState {
            shard,
            balances: BTreeMap::new(),
            contracts: BTreeMap::new(),
            gas_burned_total: 0,
        }
    }

    pub fn open_account(&mut self, account: AccountId, balance: Yocto) {
        self.balances.insert(account, balance);
    }

    pub fn register_contract(&mut self, account: &AccountId, kind: ContractKind) -> bool {
        if self.contracts.contains_key(account) {
            return false;
        }
        self.contracts.insert(account.clone(), kind);
        true
    }

    pub fn contract(&self, account: &AccountId) -> Option<&ContractKind> {
        self.contracts.get(account)
    }

    pub fn balance(&self, account: &AccountId) -> Option<Yocto> {
        self.balances.get(account).copied()
    }

    pub fn total_balance(&self) -> Yocto {
        self.balances.values().sum()
    }

    pub fn account_count(&self) -> usize {
        self.balances.len()
    }

    /// Execute a same-shard transaction. Insufficient funds revert the
    /// transfer but still burn gas (capped at what the sender holds).
    pub fn execute_intra_tx(&mut self, tx: &Transaction) -> Result<ExecutionOutcome, ExecError> {
        let bal = self
            .balance(&tx.sender)
            .ok_or_else(|| ExecError::UnknownAccount(tx.sender.clone()))?;
        if !self.balances.contains_key(&tx.receiver) {
            return Err(ExecError::UnknownAccount(tx.receiver.clone()));
        }
        if bal >= tx.amount + tx.gas {
            *self.balances.get_mut(&tx.sender).unwrap() -= tx.amount + tx.gas;
            *self.balances.get_mut(&tx.receiver).unwrap() += tx.amount;
            self.gas_burned_total += tx.gas;
            Ok(ExecutionOutcome {
                status: ExecStatus::Applied,
                gas_burned: tx.gas,
                state_delta: vec![
                    (tx.sender.clone(), -((tx.amount + tx.gas) as i128)),
                    (tx.receiver.clone(), tx.amount as i128),
                ],
            })
        } else {
            Ok(self.revert_with_gas(&tx.sender, bal, tx.gas, "insufficient balance"))
        }
    }

    /// Phase one of a cross-shard transaction: debit the sender here and
    /// emit the receipt that will credit the receiver's shard. Insufficient
    /// funds revert without emitting anything.
    pub fn execute_cstx_phase1(
        &mut self,
        tx: &Transaction,
        shard_count: u32,
    ) -> Result<(ExecutionOutcome, Option<Receipt>), ExecError> {
        let bal = self
            .balance(&tx.sender)
            .ok_or_else(|| ExecError::UnknownAccount(tx.sender.clone()))?;
        if bal >= tx.amount + tx.gas {
            *self.balances.get_mut(&tx.sender).unwrap() -= tx.amount + tx.gas;
            self.gas_burned_total += tx.gas;
            let call = match &tx.kind {
                TxKind::Transfer => None,
                TxKind::ContractCall { method } => Some(method.clone()),
            };
            let receipt = Receipt::new(
                tx.id,
                shard_of(&tx.receiver, shard_count),
                tx.receiver.clone(),
                tx.amount,
                call,
                "applied".to_string(),
            );
            let outcome = ExecutionOutcome {
                status: ExecStatus::Applied,
                gas_burned: tx.gas,
                state_delta: vec![(tx.sender.clone(), -((tx.amount + tx.gas) as i128))],
            };
            Ok((outcome, Some(receipt)))
        } else {
            Ok((self.revert_with_gas(&tx.sender, bal, tx.gas, "insufficient balance"), None))
        }
    }

    /// Execute a receipt on the receiver's shard. A plain credit always
    /// applies; a contract call lets the contract refuse it.
    pub fn execute_receipt(
        &mut self,
        receipt: &Receipt,
        polarity: AssertPolarity,
    ) -> Result<ExecutionOutcome, ExecError> {
        let bal = self
            .balance(&receipt.receiver)
            .ok_or_else(|| ExecError::UnknownReceiptTarget(receipt.receiver.clone()))?;
        if receipt.call.is_some() {
            if let Some(ContractKind::AttackContract { threshold }) =
                self.contracts.get(&receipt.receiver)
            {
                // The contract observes its balance with the deposit already
                // attached, the way a balance check inside the call would.
                let with_deposit = bal + receipt.amount;
                let rejects = match polarity {
                    AssertPolarity::Prose => with_deposit > *threshold,
                    AssertPolarity::Appendix => with_deposit <= *threshold,
                };
                if rejects {
                    return Ok(ExecutionOutcome {
                        status: ExecStatus::Reverted(REVERT_OVER.to_string()),
                        gas_burned: 0,
                        state_delta: vec![],
                    });
                }
            }
        }
        *self.balances.get_mut(&receipt.receiver).unwrap() += receipt.amount;
        Ok(ExecutionOutcome {
            status: ExecStatus::Applied,
            gas_burned: 0,
            state_delta: vec![(receipt.receiver.clone(), receipt.amount as i128)],
        })
    }

    fn revert_with_gas(
        &mut self,
        sender: &AccountId,
        bal: Yocto,
        gas: Yocto,
        reason: &str,
    ) -> ExecutionOutcome {
        let burn = bal.min(gas);
        *self.balances.get_mut(sender).unwrap() -= burn;
        self.gas_burned_total += burn;
        ExecutionOutcome {
            status: ExecStatus::Reverted(reason.to_string()),
            gas_burned: burn,
            state_delta: if burn > 0 {
                vec![(sender.clone(), -(burn as i128))]
            } else {
                vec![]
            },
        }
    }

    /// Deterministic digest of the shard's contents: account entries in
    /// sorted order, each with its balance and contract registration.
    pub fn state_root(&self) -> DigestBytes {
        let mut enc = Enc::with_capacity(16 + self.balances.len() * 64);
        enc.u32(self.shard);
        enc.u64(self.balances.len() as u64);
        for (account, balance) in &self.balances {
            enc.str(&account.0);
            enc.u128(*balance);
            match self.contracts.get(account) {
                None => enc.u8(0),
                Some(ContractKind::AttackContract { threshold }) => {
                    enc.u8(1);
                    enc.u128(*threshold);
                }
                Some(ContractKind::SimpleVault) => enc.u8(2),
            }
        }
        hash_tagged("state", &enc.finish())
    }
}
