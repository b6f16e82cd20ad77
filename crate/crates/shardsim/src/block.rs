//! Chunks, blocks, and their canonical byte encoding.
//!
//! A chunk is one shard's slice of a block: the receipts delivered to that
//! shard followed by the transactions drawn from it, bracketed by the
//! shard's state roots before and after execution. A block carries exactly
//! one chunk per shard.
//!
//! The canonical encoding below is the identity of a chunk: signatures and
//! validity proofs bind its digest, so any bit of a chunk that changes after
//! signing is detectable. The decoder accepts untrusted bytes and must never
//! panic; transaction and receipt ids are recomputed from their fields on
//! decode so a decoded chunk can never carry inconsistent ids.

use crate::digest::{hash_tagged, keyed_digest, Dec, DecodeError, DigestBytes, Enc};
use crate::ledger::{
    AssertPolarity, ExecError, ExecutionOutcome, LedgerState, Receipt, ShardId, Transaction,
    TxKind,
};
use crate::roles::RoleId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub shard: ShardId,
    pub height: u64,
    pub transactions: Vec<Transaction>,
    pub receipts: Vec<Receipt>,
    pub pre_state_root: DigestBytes,
    pub post_state_root: DigestBytes,
    /// Role that authored and signed the chunk: the shard producer in the
    /// baseline protocol, the coordinator in the atomic-block protocol.
    pub producer: RoleId,
    pub signature: DigestBytes,
    /// Identity of the enclosing block candidate, when the protocol embeds
    /// it in every chunk. Absent in the baseline protocol.
    pub block_hash: Option<DigestBytes>,
}

impl Chunk {
    /// Canonical bytes of everything except the signature.
    fn signed_payload(&self) -> Vec<u8> {
        let mut enc = self.encode_prefix();
        enc.opt_digest(&self.block_hash);
        enc.finish()
    }

    fn encode_prefix(&self) -> Enc {
        let mut enc = Enc::with_capacity(128 + self.transactions.len() * 96);
        enc.u32(self.shard);
        enc.u64(self.height);
        enc.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            encode_tx(&mut enc, tx);
        }
        enc.u32(self.receipts.len() as u32);
        for r in &self.receipts {
            encode_receipt(&mut enc, r);
        }
        enc.digest(&self.pre_state_root);
        enc.digest(&self.post_state_root);
        encode_role(&mut enc, &self.producer);
        enc
    }

    pub fn sign(&mut self) {
        self.signature = keyed_digest("chunk-sig", &self.producer.key(), &self.signed_payload());
    }

    pub fn signature_valid(&self) -> bool {
        self.signature == keyed_digest("chunk-sig", &self.producer.key(), &self.signed_payload())
    }

    /// Full canonical encoding, signature included.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = self.encode_prefix();
        enc.opt_digest(&self.block_hash);
        enc.digest(&self.signature);
        enc.finish()
    }

    /// Digest of the full canonical encoding. This is what validity proofs
    /// and block hashes commit to.
    pub fn digest(&self) -> DigestBytes {
        hash_tagged("chunk", &self.canonical_bytes())
    }

    /// Digest of the chunk contents with the block-hash field blanked.
    /// Block hashes are computed over these so that embedding the block
    /// hash into each chunk is not circular.
    pub fn digest_sans_block_hash(&self) -> DigestBytes {
        let mut enc = self.encode_prefix();
        enc.u8(0);
        hash_tagged("chunk-core", &enc.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Chunk, DecodeError> {
        let mut dec = Dec::new(bytes);
        let shard = dec.u32()?;
        let height = dec.u64()?;
        let ntx = dec.u32()? as usize;
        let mut transactions = Vec::with_capacity(ntx.min(1024));
        for _ in 0..ntx {
            transactions.push(decode_tx(&mut dec)?);
        }
        let nr = dec.u32()? as usize;
        let mut receipts = Vec::with_capacity(nr.min(1024));
        for _ in 0..nr {
            receipts.push(decode_receipt(&mut dec)?);
        }
        let pre_state_root = dec.digest()?;
        let post_state_root = dec.digest()?;
        let producer = decode_role(&mut dec)?;
        let block_hash = dec.opt_digest()?;
        let signature = dec.digest()?;
        dec.finish()?;
        Ok(Chunk {
            shard,
            height,
            transactions,
            receipts,
            pre_state_root,
            post_state_root,
            producer,
            signature,
            block_hash,
        })
    }
}

fn encode_tx(enc: &mut Enc, tx: &Transaction) {
    enc.str(tx.sender.as_str());
    enc.str(tx.receiver.as_str());
    enc.u128(tx.amount);
    enc.u128(tx.gas);
    match &tx.kind {
        TxKind::Transfer => enc.u8(0),
        TxKind::ContractCall { method } => {
            enc.u8(1);
            enc.str(method);
        }
    }
    enc.u64(tx.nonce);
}

fn decode_tx(dec: &mut Dec) -> Result<Transaction, DecodeError> {
    let sender = dec.str()?.to_string();
    let receiver = dec.str()?.to_string();
    let amount = dec.u128()?;
    let gas = dec.u128()?;
    let kind = match dec.u8()? {
        0 => TxKind::Transfer,
        1 => TxKind::ContractCall { method: dec.str()?.to_string() },
        t => return Err(DecodeError { at: 0, what: format!("bad tx kind tag {t}") }),
    };
    let nonce = dec.u64()?;
    Ok(Transaction::new(sender.into(), receiver.into(), amount, gas, kind, nonce))
}

fn encode_receipt(enc: &mut Enc, r: &Receipt) {
    enc.digest(&r.origin_tx);
    enc.u32(r.target_shard);
    enc.str(r.receiver.as_str());
    enc.u128(r.amount);
    match &r.call {
        None => enc.u8(0),
        Some(m) => {
            enc.u8(1);
            enc.str(m);
        }
    }
    enc.str(&r.former_result);
}

fn decode_receipt(dec: &mut Dec) -> Result<Receipt, DecodeError> {
    let origin_tx = dec.digest()?;
    let target_shard = dec.u32()?;
    let receiver = dec.str()?.to_string();
    let amount = dec.u128()?;
    let call = match dec.u8()? {
        0 => None,
        1 => Some(dec.str()?.to_string()),
        t => return Err(DecodeError { at: 0, what: format!("bad receipt call tag {t}") }),
    };
    let former_result = dec.str()?.to_string();
    Ok(Receipt::new(origin_tx, target_shard, receiver.into(), amount, call, former_result))
}

fn encode_role(enc: &mut Enc, role: &RoleId) {
    match role {
        RoleId::Coordinator { index } => {
            enc.u8(0);
            enc.u32(*index);
        }
        RoleId::Producer { shard, index } => {
            enc.u8(1);
            enc.u32(*shard);
            enc.u32(*index);
        }
        RoleId::GlobalValidator { index } => {
            enc.u8(2);
            enc.u32(*index);
        }
    }
}

fn decode_role(dec: &mut Dec) -> Result<RoleId, DecodeError> {
    match dec.u8()? {
        0 => Ok(RoleId::Coordinator { index: dec.u32()? }),
        1 => Ok(RoleId::Producer { shard: dec.u32()?, index: dec.u32()? }),
        2 => Ok(RoleId::GlobalValidator { index: dec.u32()? }),
        t => Err(DecodeError { at: 0, what: format!("bad role tag {t}") }),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub parent: DigestBytes,
    pub hash: DigestBytes,
    pub chunks: Vec<Chunk>,
}

/// Block identity: height, parent, authoring role, and every chunk's
/// block-hash-free digest, so the hash can be embedded back into the
/// chunks without circularity.
pub fn compute_block_hash(
    height: u64,
    parent: &DigestBytes,
    author: &RoleId,
    chunk_core_digests: &[DigestBytes],
) -> DigestBytes {
    let mut enc = Enc::new();
    enc.u64(height);
    enc.digest(parent);
    enc.str(&author.key());
    enc.u32(chunk_core_digests.len() as u32);
    for d in chunk_core_digests {
        enc.digest(d);
    }
    hash_tagged("block", &enc.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkExecError {
    #[error("{what} routed to shard {found}, expected {expected}")]
    WrongShard { what: String, expected: ShardId, found: ShardId },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Result of executing a chunk body against some pre-state.
#[derive(Clone, Debug)]
pub struct ChunkExecution {
    pub receipt_outcomes: Vec<ExecutionOutcome>,
    pub tx_outcomes: Vec<ExecutionOutcome>,
    /// Receipts emitted by cross-shard transactions in this chunk, in
    /// transaction order.
    pub emitted: Vec<Receipt>,
    pub post_state_root: DigestBytes,
}

/// Execute a chunk body: delivered receipts first, then transactions.
/// Cross-shard transactions run phase one here and emit receipts for their
/// target shards.
///
/// This is the single execution path shared by baseline chunk production,
/// candidate assembly, and producer-side verification, so all of them agree
/// byte-for-byte on what a chunk does.
pub fn execute_chunk_body(
    state: &mut LedgerState,
    receipts: &[Receipt],
    txs: &[Transaction],
    shard_count: u32,
    polarity: AssertPolarity,
) -> Result<ChunkExecution, ChunkExecError> {
    let shard = state.shard;
    let mut receipt_outcomes = Vec::with_capacity(receipts.len());
    for r in receipts {
        if r.target_shard != shard {
            return Err(ChunkExecError::WrongShard {
                what: format!("receipt {}", r.id.short_hex()),
                expected: r.target_shard,
                found: shard,
            });
        }
        receipt_outcomes.push(state.execute_receipt(r, polarity)?);
    }

    let mut tx_outcomes = Vec::with_capacity(txs.len());
    let mut emitted = Vec::new();
    for tx in txs {
        let sender_shard = crate::ledger::shard_of(&tx.sender, shard_count);
        if sender_shard != shard {
            return Err(ChunkExecError::WrongShard {
                what: format!("tx {}", tx.id.short_hex()),
                expected: sender_shard,
                found: shard,
            });
        }
        if tx.is_cross_shard(shard_count) {
            let (outcome, receipt) = state.execute_cstx_phase1(tx, shard_count)?;
            tx_outcomes.push(outcome);
            if let Some(r) = receipt {
                emitted.push(r);
            }
        } else {
            tx_outcomes.push(state.execute_intra_tx(tx)?);
        }
    }

    Ok(ChunkExecution {
        receipt_outcomes,
        tx_outcomes,
        emitted,
        post_state_root: state.state_root(),
    })
}
