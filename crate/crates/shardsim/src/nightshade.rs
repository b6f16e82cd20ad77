//! Baseline sharded chain: per-shard chunks, receipt deferral, and the
//! challenge/rollback protocol.
//!
//! Each height, every shard produces one chunk. A cross-shard transaction's
//! phase one executes in its sender's chunk and emits a receipt; the receipt
//! is delivered to the receiver's shard in the next height's chunk. If the
//! receipt reverts there, phase one has already been applied and the chain
//! is inconsistent: a challenge names the offending transaction's block and
//! the whole chain rolls back to just before it. Rolling back re-opens the
//! interval for the same trick, which is exactly the weakness the
//! interference attack drives in a loop.

use crate::block::{compute_block_hash, execute_chunk_body, Block, Chunk, ChunkExecError};
use crate::digest::DigestBytes;
use crate::ledger::{
    AccountId, AssertPolarity, ExecStatus, LedgerState, Receipt, ShardId, Transaction, Yocto,
};
use crate::roles::RoleId;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NightshadeError {
    #[error("chunk for shard {0} holds more transactions than allowed")]
    ChunkOverflow(ShardId),
    #[error("no chunk staged for shard {0}")]
    MissingChunk(ShardId),
    #[error("two chunks staged for shard {0}")]
    DuplicateShard(ShardId),
    #[error("assembled chunk for shard {0} does not match the staged chunk")]
    UnknownChunk(ShardId),
    #[error("invalid challenge: {0}")]
    InvalidChallenge(String),
    #[error("state snapshot for height {0} was pruned")]
    SnapshotUnavailable(u64),
    #[error(transparent)]
    ChunkExec(#[from] ChunkExecError),
}

/// Accusation that a cross-shard transaction was half-applied: phase one
/// landed in `block_height` but its receipt reverted one height later.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub offending_tx: DigestBytes,
    /// Height of the block containing the applied phase one.
    pub block_height: u64,
    /// Shard on which phase one executed.
    pub shard: ShardId,
    pub reason: String,
    pub challenger: RoleId,
}

#[derive(Clone, Debug)]
struct FailureRecord {
    /// Height whose block contains the applied phase one.
    cstx_height: u64,
    /// Height at which the receipt reverted (always cstx_height + 1).
    fail_height: u64,
    origin: Transaction,
    receipt_amount: Yocto,
    reason: String,
    target_shard: ShardId,
}

#[derive(Clone)]
struct Snapshot {
    states: Vec<LedgerState>,
    pending: Vec<Vec<Receipt>>,
}

struct StoredBlock {
    block: Block,
    /// Ids of receipts this block's chunks emitted. Kept after the body is
    /// pruned so the deferral audit can still run against the next block.
    emitted_ids: BTreeSet<DigestBytes>,
    body_pruned: bool,
    applied_txs: u64,
    applied_receipts: u64,
    /// Challenge penalties charged inside this block's chunks. A rollback
    /// that cancels the block puts them back in the queue.
    penalties: Vec<(AccountId, Yocto)>,
}

struct StagedBlock {
    height: u64,
    chunks: Vec<Option<Chunk>>,
    emitted: Vec<Vec<Receipt>>,
    applied_txs: u64,
    applied_receipts: u64,
    penalties: Vec<(AccountId, Yocto)>,
}

#[derive(Clone, Debug)]
pub struct RollbackOutcome {
    pub new_tip: u64,
    pub cancelled_blocks: u64,
    /// Transactions from the cancelled blocks, minus the offender, in their
    /// original inclusion order. The caller feeds them back to the mempool.
    pub reinstated: Vec<Transaction>,
    pub offender: Transaction,
    /// Gas the offender owes again after state restoration. The debt is
    /// settled inside the next chunk produced on the offender's shard, so
    /// the charge is always recorded by a block rather than floating free
    /// of the chain.
    pub gas_recharged: Yocto,
}

/// One validator's view of the baseline chain, with enough state to
/// produce chunks, spot half-applied cross-shard transactions, and roll
/// the chain back when challenged.
pub struct ChainView {
    pub shard_count: u32,
    pub polarity: AssertPolarity,
    pub max_txs_per_chunk: usize,
    pub refund_gas: bool,
    pub blacklist_offender: bool,
    /// Keep full block bodies and snapshots for this many recent heights;
    /// zero keeps everything. Rollbacks can only reach retained heights.
    pub retain_blocks: usize,
    blocks: Vec<StoredBlock>,
    states: Vec<LedgerState>,
    /// Receipts emitted at the tip, per target shard, awaiting delivery in
    /// the next block.
    pending: Vec<Vec<Receipt>>,
    snapshots: BTreeMap<u64, Snapshot>,
    failures: Vec<FailureRecord>,
    blacklisted: BTreeSet<DigestBytes>,
    staged: Option<StagedBlock>,
    /// Gas debts from rollbacks, waiting for the next chunk on the debtor's
    /// shard to collect them.
    penalties: Vec<(AccountId, Yocto)>,
    pub rollback_count: u64,
    /// Transactions applied in blocks still on the chain; rollbacks take
    /// their blocks' counts back out.
    pub applied_tx_total: u64,
    pub applied_receipt_total: u64,
}

impl ChainView {
    pub fn new(
        shard_count: u32,
        polarity: AssertPolarity,
        max_txs_per_chunk: usize,
        genesis_states: Vec<LedgerState>,
    ) -> Self {
        assert_eq!(genesis_states.len(), shard_count as usize);
        let genesis_chunks: Vec<Chunk> = genesis_states
            .iter()
            .map(|st| {
                let root = st.state_root();
                let mut chunk = Chunk {
                    shard: st.shard,
                    height: 0,
                    transactions: vec![],
                    receipts: vec![],
                    pre_state_root: root,
                    post_state_root: root,
                    producer: RoleId::producer(st.shard, 0),
                    signature: DigestBytes::ZERO,
                    block_hash: None,
                };
                chunk.sign();
                chunk
            })
            .collect();
        let hash = compute_block_hash(
            0,
            &DigestBytes::ZERO,
            &RoleId::producer(0, 0),
            &genesis_chunks.iter().map(|c| c.digest_sans_block_hash()).collect::<Vec<_>>(),
        );
        let genesis = Block { height: 0, parent: DigestBytes::ZERO, hash, chunks: genesis_chunks };
        let pending: Vec<Vec<Receipt>> = vec![Vec::new(); shard_count as usize];
        let snapshot = Snapshot { states: genesis_states.clone(), pending: pending.clone() };
        ChainView {
            shard_count,
            polarity,
            max_txs_per_chunk,
            refund_gas: false,
            blacklist_offender: false,
            retain_blocks: 0,
            blocks: vec![StoredBlock {
                block: genesis,
                emitted_ids: BTreeSet::new(),
                body_pruned: false,
                applied_txs: 0,
                applied_receipts: 0,
                penalties: Vec::new(),
            }],
            states: genesis_states,
            pending,
            snapshots: BTreeMap::from([(0, snapshot)]),
            failures: Vec::new(),
            blacklisted: BTreeSet::new(),
            staged: None,
            penalties: Vec::new(),
            rollback_count: 0,
            applied_tx_total: 0,
            applied_receipt_total: 0,
        }
    }

    pub fn tip_height(&self) -> u64 {
        (self.blocks.len() - 1) as u64
    }

    pub fn tip_hash(&self) -> DigestBytes {
        self.blocks.last().unwrap().block.hash
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize).map(|s| &s.block)
    }

    pub fn state(&self, shard: ShardId) -> &LedgerState {
        &self.states[shard as usize]
    }

    pub fn state_mut(&mut self, shard: ShardId) -> &mut LedgerState {
        &mut self.states[shard as usize]
    }

    pub fn is_blacklisted(&self, id: &DigestBytes) -> bool {
        self.blacklisted.contains(id)
    }

    /// Receipts waiting for delivery to `shard` at the next height.
    pub fn pending_receipts(&self, shard: ShardId) -> &[Receipt] {
        &self.pending[shard as usize]
    }

    /// Produce the chunk for one shard at height tip + 1: deliver the
    /// receipts emitted at the tip, then execute `txs` drawn from this
    /// shard's senders.
    pub fn produce_chunk(
        &mut self,
        shard: ShardId,
        txs: Vec<Transaction>,
        producer: RoleId,
    ) -> Result<Chunk, NightshadeError> {
        if txs.len() > self.max_txs_per_chunk {
            return Err(NightshadeError::ChunkOverflow(shard));
        }
        let height = self.tip_height() + 1;
        if self.staged.is_none() {
            self.staged = Some(StagedBlock {
                height,
                chunks: vec![None; self.shard_count as usize],
                emitted: vec![Vec::new(); self.shard_count as usize],
                applied_txs: 0,
                applied_receipts: 0,
                penalties: Vec::new(),
            });
        }
        if self.staged.as_ref().unwrap().chunks[shard as usize].is_some() {
            return Err(NightshadeError::DuplicateShard(shard));
        }

        let shard_count = self.shard_count;
        let mut due: Vec<(AccountId, Yocto)> = Vec::new();
        self.penalties.retain(|(account, gas)| {
            if crate::ledger::shard_of(account, shard_count) == shard {
                due.push((account.clone(), *gas));
                false
            } else {
                true
            }
        });

        let incoming = std::mem::take(&mut self.pending[shard as usize]);
        let state = &mut self.states[shard as usize];
        let pre_state_root = state.state_root();
        for (account, gas) in &due {
            state.charge_gas(account, *gas);
        }
        let exec = execute_chunk_body(state, &incoming, &txs, self.shard_count, self.polarity)?;

        // A reverted receipt whose phase one was applied a height earlier is
        // the inconsistency the challenge protocol exists for.
        for (receipt, outcome) in incoming.iter().zip(&exec.receipt_outcomes) {
            if let ExecStatus::Reverted(reason) = &outcome.status {
                if let Some(origin) = self.find_tx(height - 1, &receipt.origin_tx) {
                    self.failures.push(FailureRecord {
                        cstx_height: height - 1,
                        fail_height: height,
                        origin,
                        receipt_amount: receipt.amount,
                        reason: reason.clone(),
                        target_shard: shard,
                    });
                }
            }
        }

        let mut chunk = Chunk {
            shard,
            height,
            transactions: txs,
            receipts: incoming,
            pre_state_root,
            post_state_root: exec.post_state_root,
            producer,
            signature: DigestBytes::ZERO,
            block_hash: None,
        };
        chunk.sign();

        let staged = self.staged.as_mut().unwrap();
        for r in exec.emitted {
            staged.emitted[r.target_shard as usize].push(r);
        }
        staged.applied_txs += exec.tx_outcomes.iter().filter(|o| o.applied()).count() as u64;
        staged.applied_receipts +=
            exec.receipt_outcomes.iter().filter(|o| o.applied()).count() as u64;
        staged.penalties.extend(due);
        staged.chunks[shard as usize] = Some(chunk.clone());
        Ok(chunk)
    }

    /// Assemble the staged chunks into the block at tip + 1 and commit it.
    pub fn assemble_block(&mut self, chunks: Vec<Chunk>) -> Result<&Block, NightshadeError> {
        let staged = self
            .staged
            .as_ref()
            .ok_or(NightshadeError::MissingChunk(0))?;
        let mut seen = vec![false; self.shard_count as usize];
        for chunk in &chunks {
            let idx = chunk.shard as usize;
            if idx >= seen.len() || staged.chunks[idx].is_none() {
                return Err(NightshadeError::MissingChunk(chunk.shard));
            }
            if seen[idx] {
                return Err(NightshadeError::DuplicateShard(chunk.shard));
            }
            if staged.chunks[idx].as_ref().unwrap().digest() != chunk.digest() {
                return Err(NightshadeError::UnknownChunk(chunk.shard));
            }
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(NightshadeError::MissingChunk(missing as u32));
        }

        let staged = self.staged.take().unwrap();
        let height = staged.height;
        let mut ordered: Vec<Chunk> = staged.chunks.into_iter().map(|c| c.unwrap()).collect();
        ordered.sort_by_key(|c| c.shard);
        let author = ordered[0].producer.clone();
        let hash = compute_block_hash(
            height,
            &self.tip_hash(),
            &author,
            &ordered.iter().map(|c| c.digest_sans_block_hash()).collect::<Vec<_>>(),
        );
        let emitted_ids =
            staged.emitted.iter().flatten().map(|r| r.id).collect::<BTreeSet<_>>();
        let block = Block { height, parent: self.tip_hash(), hash, chunks: ordered };
        self.applied_tx_total += staged.applied_txs;
        self.applied_receipt_total += staged.applied_receipts;
        self.blocks.push(StoredBlock {
            block,
            emitted_ids,
            body_pruned: false,
            applied_txs: staged.applied_txs,
            applied_receipts: staged.applied_receipts,
            penalties: staged.penalties,
        });
        self.pending = staged.emitted;
        self.snapshots.insert(
            height,
            Snapshot { states: self.states.clone(), pending: self.pending.clone() },
        );
        self.prune();
        Ok(&self.blocks.last().unwrap().block)
    }

    /// Oldest half-applied cross-shard transaction on record, if any.
    pub fn detect_inconsistency(&self) -> Option<Challenge> {
        self.failures
            .iter()
            .min_by_key(|f| (f.cstx_height, f.origin.id))
            .map(|f| Challenge {
                offending_tx: f.origin.id,
                block_height: f.cstx_height,
                shard: crate::ledger::shard_of(&f.origin.sender, self.shard_count),
                reason: format!(
                    "phase one applied at height {}, receipt reverted at height {}: {}",
                    f.cstx_height, f.fail_height, f.reason
                ),
                challenger: RoleId::producer(f.target_shard, 0),
            })
    }

    /// Heights of recorded receipt failures, oldest first.
    pub fn failure_heights(&self) -> Vec<u64> {
        self.failures.iter().map(|f| f.fail_height).collect()
    }

    /// Truncate the chain to just below the challenged block and restore
    /// every shard's state from the snapshot taken at that height. State
    /// restoration also un-debits the offender; unless `refund_gas` is set,
    /// its gas is charged again so a failed attempt still costs its sender.
    pub fn rollback(&mut self, challenge: &Challenge) -> Result<RollbackOutcome, NightshadeError> {
        if challenge.block_height == 0 {
            return Err(NightshadeError::InvalidChallenge(
                "cannot roll back the genesis block".into(),
            ));
        }
        if challenge.block_height > self.tip_height() {
            return Err(NightshadeError::InvalidChallenge(format!(
                "challenged height {} is beyond the tip",
                challenge.block_height
            )));
        }
        let offender = self
            .find_tx(challenge.block_height, &challenge.offending_tx)
            .ok_or_else(|| {
                NightshadeError::InvalidChallenge(format!(
                    "transaction {} not found at height {}",
                    challenge.offending_tx.short_hex(),
                    challenge.block_height
                ))
            })?;
        let target = challenge.block_height - 1;
        let snapshot = self
            .snapshots
            .get(&target)
            .cloned()
            .ok_or(NightshadeError::SnapshotUnavailable(target))?;

        let mut reinstated = Vec::new();
        for h in challenge.block_height..=self.tip_height() {
            let stored = &self.blocks[h as usize];
            if stored.body_pruned {
                return Err(NightshadeError::SnapshotUnavailable(h));
            }
            for chunk in &stored.block.chunks {
                for tx in &chunk.transactions {
                    if tx.id != challenge.offending_tx {
                        reinstated.push(tx.clone());
                    }
                }
            }
        }

        let cancelled = self.tip_height() - target;
        let mut requeued: Vec<(AccountId, Yocto)> = Vec::new();
        for stored in &self.blocks[target as usize + 1..] {
            self.applied_tx_total -= stored.applied_txs;
            self.applied_receipt_total -= stored.applied_receipts;
            requeued.extend(stored.penalties.iter().cloned());
        }
        self.blocks.truncate(target as usize + 1);
        self.staged = None;
        self.states = snapshot.states;
        self.pending = snapshot.pending;
        self.snapshots.retain(|h, _| *h <= target);
        self.failures.retain(|f| f.cstx_height <= target);

        // Debts collected by now-cancelled blocks fall due again, ahead of
        // anything still queued.
        requeued.append(&mut self.penalties);
        let mut gas_recharged = 0;
        if !self.refund_gas {
            requeued.push((offender.sender.clone(), offender.gas));
            gas_recharged = offender.gas;
        }
        self.penalties = requeued;
        if self.blacklist_offender {
            self.blacklisted.insert(offender.id);
        }
        self.rollback_count += 1;

        Ok(RollbackOutcome {
            new_tip: target,
            cancelled_blocks: cancelled,
            reinstated,
            offender,
            gas_recharged,
        })
    }

    /// Check that every shard's live state hashes to the tip block's
    /// post-state roots. Returns a description of the first mismatch.
    pub fn verify_state_matches_tip(&self) -> Result<(), String> {
        let tip = &self.blocks.last().unwrap().block;
        for chunk in &tip.chunks {
            let live = self.states[chunk.shard as usize].state_root();
            if live != chunk.post_state_root {
                return Err(format!(
                    "shard {} state root {} != tip post-state root {}",
                    chunk.shard,
                    live.short_hex(),
                    chunk.post_state_root.short_hex()
                ));
            }
        }
        Ok(())
    }

    /// Check that every receipt in every retained block was emitted by the
    /// block immediately below it.
    pub fn verify_receipt_deferral(&self) -> Result<(), String> {
        for h in 1..=self.tip_height() {
            let stored = &self.blocks[h as usize];
            if stored.body_pruned {
                continue;
            }
            let below = &self.blocks[h as usize - 1];
            for chunk in &stored.block.chunks {
                for r in &chunk.receipts {
                    if !below.emitted_ids.contains(&r.id) {
                        return Err(format!(
                            "receipt {} in block {} was not emitted at height {}",
                            r.id.short_hex(),
                            h,
                            h - 1
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_balances(&self) -> Yocto {
        self.states.iter().map(|s| s.total_balance()).sum()
    }

    pub fn total_gas_burned(&self) -> Yocto {
        self.states.iter().map(|s| s.gas_burned_total).sum()
    }

    /// Value in flight: receipts awaiting delivery plus receipts that
    /// reverted but whose phase one has not been rolled back yet.
    pub fn escrowed_value(&self) -> Yocto {
        let pending: Yocto = self.pending.iter().flatten().map(|r| r.amount).sum();
        let unresolved: Yocto = self.failures.iter().map(|f| f.receipt_amount).sum();
        pending + unresolved
    }

    fn find_tx(&self, height: u64, id: &DigestBytes) -> Option<Transaction> {
        let stored = self.blocks.get(height as usize)?;
        if stored.body_pruned {
            return None;
        }
        stored
            .block
            .chunks
            .iter()
            .flat_map(|c| c.transactions.iter())
            .find(|tx| tx.id == *id)
            .cloned()
    }

    fn prune(&mut self) {
        if self.retain_blocks == 0 {
            return;
        }
        let tip = self.tip_height();
        let keep_from = tip.saturating_sub(self.retain_blocks as u64);
        self.snapshots.retain(|h, _| *h >= keep_from);
        for stored in &mut self.blocks[..keep_from as usize] {
            if !stored.body_pruned {
                stored.block.chunks.clear();
                stored.body_pruned = true;
            }
        }
    }
}

impl LedgerState {
    /// Deduct gas from an account without a surrounding transaction, used
    /// when a rollback re-charges the offender. Burns at most the balance.
    pub(crate) fn charge_gas(&mut self, account: &AccountId, gas: Yocto) -> Yocto {
        let Some(bal) = self.balance(account) else { return 0 };
        let burn = bal.min(gas);
        self.open_account(account.clone(), bal - burn);
        self.gas_burned_total += burn;
        burn
    }
}
