//! Atomic-block protocol: coordinator-assembled candidates, producer
//! attestation, stateless global validation, and fork choice.
//!
//! A coordinator packs a whole block at once, so a cross-shard transaction
//! and the receipt it emits land in the same candidate, with the candidate's
//! hash embedded in every chunk. Shard producers re-execute their chunk and
//! attest to it with a validity proof (modeled here as a keyed digest plus a
//! virtual-time cost). A global validator holds no shard state at all: it
//! groups chunks by embedded block hash, checks the proofs, checks that
//! cross-shard transactions and receipts pair up exactly, and finalizes.
//! Because the pairing is checked before anything lands, there is no
//! half-applied state to challenge and nothing to roll back.

use crate::block::{compute_block_hash, execute_chunk_body, Block, Chunk};
use crate::digest::{hash_tagged, keyed_digest, DigestBytes, Enc};
use crate::incentives::TrustLedger;
use crate::ledger::{
    shard_of, AccountId, AssertPolarity, ContractKind, LedgerState, Receipt, ShardId, Transaction,
    Yocto,
};
use crate::params::ProofPolicy;
use crate::roles::RoleId;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynchroError {
    #[error("refusing to attest a chunk that was not verified")]
    RefusedUnverifiedChunk,
}

/// A coordinator's proposed block: one chunk per shard, each carrying the
/// candidate's hash.
#[derive(Clone, Debug)]
pub struct CandidateBlock {
    pub height: u64,
    pub parent: DigestBytes,
    pub coordinator: RoleId,
    pub hash: DigestBytes,
    pub chunks: Vec<Chunk>,
}

impl CandidateBlock {
    pub fn header(&self) -> CandidateHeader {
        CandidateHeader {
            height: self.height,
            parent: self.parent,
            coordinator: self.coordinator.clone(),
            hash: self.hash,
            signature: header_signature(&self.coordinator, self.height, &self.parent, &self.hash),
        }
    }
}

/// Candidate metadata a producer forwards to global validators so they can
/// attribute the block to its coordinator and check linkage statelessly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateHeader {
    pub height: u64,
    pub parent: DigestBytes,
    pub coordinator: RoleId,
    pub hash: DigestBytes,
    pub signature: DigestBytes,
}

fn header_signature(
    coordinator: &RoleId,
    height: u64,
    parent: &DigestBytes,
    hash: &DigestBytes,
) -> DigestBytes {
    let mut enc = Enc::new();
    enc.u64(height);
    enc.digest(parent);
    enc.digest(hash);
    keyed_digest("header", &coordinator.key(), &enc.finish())
}

impl CandidateHeader {
    pub fn signature_valid(&self) -> bool {
        self.signature
            == header_signature(&self.coordinator, self.height, &self.parent, &self.hash)
    }
}

/// Knobs for adversarial coordinator behavior.
#[derive(Clone, Debug, Default)]
pub struct BuildTweaks {
    /// Silently drop this sender's transactions.
    pub ignore_sender: Option<AccountId>,
    /// Keep cross-shard transactions but drop every receipt, breaking the
    /// pairing the global validator checks.
    pub strip_receipts: bool,
}

#[derive(Clone, Debug)]
pub struct BuildOutcome {
    pub candidate: CandidateBlock,
    /// Transactions left for a later height because they could not pay.
    pub deferred: Vec<Transaction>,
    /// Transactions excluded for good: their receipt was refused by the
    /// target, so including them would half-apply them.
    pub rejected: Vec<(Transaction, String)>,
    pub included_txs: usize,
}

/// Assemble a candidate block from `txs` (arrival order) on top of the
/// given parent states.
///
/// Selection is conservative: a transaction that cannot pay from its plain
/// parent-state balance is deferred to a later height rather than ordered
/// after the receipts that might fund it. A transaction whose receipt the
/// target refuses is rejected outright, receipt and phase one together, so
/// every candidate leaving here pairs cross-shard transactions and receipts
/// exactly.
pub fn coordinator_build_block(
    coordinator: &RoleId,
    parent_hash: DigestBytes,
    height: u64,
    parent_states: &[LedgerState],
    txs: &[Transaction],
    shard_count: u32,
    max_txs_per_chunk: usize,
    polarity: AssertPolarity,
    tweaks: &BuildTweaks,
) -> BuildOutcome {
    let mut excluded: BTreeSet<DigestBytes> = BTreeSet::new();
    let mut rejected: Vec<(Transaction, String)> = Vec::new();

    loop {
        // Select per-shard transaction lists in arrival order, respecting
        // chunk capacity and prior exclusions.
        let mut per_shard_txs: Vec<Vec<Transaction>> = vec![Vec::new(); shard_count as usize];
        let mut full_shards = 0;
        for tx in txs {
            if full_shards == shard_count as usize {
                break;
            }
            if excluded.contains(&tx.id) {
                continue;
            }
            if let Some(ignored) = &tweaks.ignore_sender {
                if tx.sender == *ignored {
                    continue;
                }
            }
            let shard = shard_of(&tx.sender, shard_count) as usize;
            if per_shard_txs[shard].len() < max_txs_per_chunk {
                per_shard_txs[shard].push(tx.clone());
                if per_shard_txs[shard].len() == max_txs_per_chunk {
                    full_shards += 1;
                }
            }
        }

        // Plan pass: execute each shard's transactions against its parent
        // state without receipts. Whatever cannot pay here is deferred.
        let mut deferred: Vec<Transaction> = Vec::new();
        let mut planned: Vec<Vec<Transaction>> = vec![Vec::new(); shard_count as usize];
        let mut plan_states: Vec<LedgerState> = Vec::with_capacity(shard_count as usize);
        let mut receipts_by_target: Vec<Vec<Receipt>> = vec![Vec::new(); shard_count as usize];
        for shard in 0..shard_count as usize {
            let mut state = parent_states[shard].clone();
            for tx in &per_shard_txs[shard] {
                if tx.is_cross_shard(shard_count) {
                    match state.execute_cstx_phase1(tx, shard_count) {
                        Ok((outcome, Some(receipt))) if outcome.applied() => {
                            receipts_by_target[receipt.target_shard as usize].push(receipt);
                            planned[shard].push(tx.clone());
                        }
                        _ => deferred.push(tx.clone()),
                    }
                } else {
                    match state.execute_intra_tx(tx) {
                        Ok(outcome) if outcome.applied() => planned[shard].push(tx.clone()),
                        _ => deferred.push(tx.clone()),
                    }
                }
            }
            plan_states.push(state);
        }
        // The plan pass burned gas for deferred attempts; rebuild the
        // deferred senders' effect by re-running only the kept list.
        for shard in 0..shard_count as usize {
            if planned[shard].len() != per_shard_txs[shard].len() {
                let mut state = parent_states[shard].clone();
                for tx in &planned[shard] {
                    if tx.is_cross_shard(shard_count) {
                        let _ = state.execute_cstx_phase1(tx, shard_count);
                    } else {
                        let _ = state.execute_intra_tx(tx);
                    }
                }
                plan_states[shard] = state;
            }
        }

        // Receipt pass: deliver receipts in canonical (pre-transaction)
        // order. The contract's balance rule sees parent balance plus the
        // receipts delivered before it, exactly as execution will.
        let mut refused: Vec<(DigestBytes, String)> = Vec::new();
        for shard in 0..shard_count as usize {
            let mut rule_balances: BTreeMap<AccountId, Yocto> = BTreeMap::new();
            for receipt in &receipts_by_target[shard] {
                let parent = &parent_states[shard];
                let Some(ContractKind::AttackContract { threshold }) =
                    parent.contract(&receipt.receiver)
                else {
                    continue;
                };
                // Receipts run before transactions, so the contract's rule
                // sees parent balance plus earlier receipt credits only.
                let bal = rule_balances
                    .entry(receipt.receiver.clone())
                    .or_insert_with(|| parent.balance(&receipt.receiver).unwrap_or(0));
                if receipt.call.is_some() {
                    let refuses = match polarity {
                        AssertPolarity::Prose => *bal + receipt.amount > *threshold,
                        AssertPolarity::Appendix => *bal + receipt.amount <= *threshold,
                    };
                    if refuses {
                        refused
                            .push((receipt.origin_tx, crate::ledger::REVERT_OVER.to_string()));
                        continue;
                    }
                }
                *bal += receipt.amount;
            }
        }

        if !refused.is_empty() {
            for (origin, reason) in refused {
                if excluded.insert(origin) {
                    if let Some(tx) = txs.iter().find(|t| t.id == origin) {
                        rejected.push((tx.clone(), reason.clone()));
                    }
                }
            }
            continue;
        }

        // Apply the receipt credits and freeze the chunks.
        let mut chunks: Vec<Chunk> = Vec::with_capacity(shard_count as usize);
        let mut included = 0;
        for shard in 0..shard_count as usize {
            let mut state = plan_states[shard].clone();
            for receipt in &receipts_by_target[shard] {
                credit_account(&mut state, &receipt.receiver, receipt.amount);
            }
            included += planned[shard].len();
            chunks.push(Chunk {
                shard: shard as u32,
                height,
                transactions: std::mem::take(&mut planned[shard]),
                receipts: std::mem::take(&mut receipts_by_target[shard]),
                pre_state_root: parent_states[shard].state_root(),
                post_state_root: state.state_root(),
                producer: coordinator.clone(),
                signature: DigestBytes::ZERO,
                block_hash: None,
            });
        }

        if tweaks.strip_receipts {
            for (shard, chunk) in chunks.iter_mut().enumerate() {
                if !chunk.receipts.is_empty() {
                    chunk.receipts.clear();
                    // Recompute the post root so the chunk stays locally
                    // consistent; only the cross-chunk pairing is broken.
                    let mut state = parent_states[shard].clone();
                    for tx in &chunk.transactions {
                        if tx.is_cross_shard(shard_count) {
                            let _ = state.execute_cstx_phase1(tx, shard_count);
                        } else {
                            let _ = state.execute_intra_tx(tx);
                        }
                    }
                    chunk.post_state_root = state.state_root();
                }
            }
        }

        let hash = compute_block_hash(
            height,
            &parent_hash,
            coordinator,
            &chunks.iter().map(|c| c.digest_sans_block_hash()).collect::<Vec<_>>(),
        );
        for chunk in &mut chunks {
            chunk.block_hash = Some(hash);
            chunk.sign();
        }

        return BuildOutcome {
            candidate: CandidateBlock {
                height,
                parent: parent_hash,
                coordinator: coordinator.clone(),
                hash,
                chunks,
            },
            deferred,
            rejected,
            included_txs: included,
        };
    }
}

fn credit_account(state: &mut LedgerState, account: &AccountId, amount: Yocto) {
    let bal = state.balance(account).unwrap_or(0);
    state.open_account(account.clone(), bal + amount);
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("atomicity violated: {0}")]
pub struct AtomicityViolation(pub String);

/// Check that cross-shard transactions and receipts in one candidate pair
/// up exactly: every cross-shard transaction has precisely one receipt, in
/// the right shard's chunk, and every receipt points back at a cross-shard
/// transaction present in the candidate.
pub fn check_atomicity(chunks: &[Chunk], shard_count: u32) -> Result<(), AtomicityViolation> {
    let mut cstx: BTreeMap<DigestBytes, ShardId> = BTreeMap::new();
    for chunk in chunks {
        for tx in &chunk.transactions {
            if tx.is_cross_shard(shard_count) {
                let target = shard_of(&tx.receiver, shard_count);
                if cstx.insert(tx.id, target).is_some() {
                    return Err(AtomicityViolation(format!(
                        "cross-shard tx {} appears twice",
                        tx.id.short_hex()
                    )));
                }
            }
        }
    }
    let mut receipted: BTreeSet<DigestBytes> = BTreeSet::new();
    for chunk in chunks {
        for receipt in &chunk.receipts {
            match cstx.get(&receipt.origin_tx) {
                None => {
                    return Err(AtomicityViolation(format!(
                        "receipt {} has no transaction in this block",
                        receipt.id.short_hex()
                    )))
                }
                Some(target) => {
                    if *target != chunk.shard || receipt.target_shard != chunk.shard {
                        return Err(AtomicityViolation(format!(
                            "receipt {} delivered to shard {}, expected {}",
                            receipt.id.short_hex(),
                            chunk.shard,
                            target
                        )));
                    }
                }
            }
            if !receipted.insert(receipt.origin_tx) {
                return Err(AtomicityViolation(format!(
                    "transaction {} has two receipts",
                    receipt.origin_tx.short_hex()
                )));
            }
        }
    }
    for (id, _) in &cstx {
        if !receipted.contains(id) {
            return Err(AtomicityViolation(format!(
                "cross-shard tx {} has no receipt in this block",
                id.short_hex()
            )));
        }
    }
    Ok(())
}

/// Evidence that a producer re-executed a chunk and got the claimed roots.
#[derive(Clone, Debug)]
pub struct VerifiedChunk {
    pub chunk_digest: DigestBytes,
    pub pre_state_root: DigestBytes,
    pub post_state_root: DigestBytes,
    /// Transactions plus receipts, for per-transaction proof pricing.
    pub items: usize,
    /// The shard state after execution; the simulation reuses it instead
    /// of executing the chunk a third time.
    pub post_state: LedgerState,
}

/// Re-execute a candidate chunk against the producer's shard state.
pub fn producer_verify_chunk(
    chunk: &Chunk,
    expected_candidate: &CandidateBlock,
    local_state: &LedgerState,
    shard_count: u32,
    max_txs_per_chunk: usize,
    polarity: AssertPolarity,
) -> Result<VerifiedChunk, String> {
    if chunk.shard != local_state.shard {
        return Err(format!("chunk is for shard {}, not {}", chunk.shard, local_state.shard));
    }
    if chunk.height != expected_candidate.height {
        return Err("chunk height does not match candidate".into());
    }
    if chunk.block_hash != Some(expected_candidate.hash) {
        return Err("chunk does not embed the candidate's block hash".into());
    }
    if !chunk.signature_valid() {
        return Err("bad chunk signature".into());
    }
    if chunk.transactions.len() > max_txs_per_chunk {
        return Err("chunk over capacity".into());
    }
    let local_root = local_state.state_root();
    if chunk.pre_state_root != local_root {
        return Err(format!(
            "pre-state root {} does not match local state {}",
            chunk.pre_state_root.short_hex(),
            local_root.short_hex()
        ));
    }
    let mut state = local_state.clone();
    let exec = execute_chunk_body(
        &mut state,
        &chunk.receipts,
        &chunk.transactions,
        shard_count,
        polarity,
    )
    .map_err(|e| e.to_string())?;
    if exec.post_state_root != chunk.post_state_root {
        return Err(format!(
            "post-state root mismatch: executed {}, chunk claims {}",
            exec.post_state_root.short_hex(),
            chunk.post_state_root.short_hex()
        ));
    }
    Ok(VerifiedChunk {
        chunk_digest: chunk.digest(),
        pre_state_root: chunk.pre_state_root,
        post_state_root: chunk.post_state_root,
        items: chunk.transactions.len() + chunk.receipts.len(),
        post_state: state,
    })
}

/// Modeled validity proof: attests that executing the chunk with this
/// digest on `pre_state_root` yields `post_state_root`. The attestation is
/// a keyed digest standing in for a succinct proof; `modeled_cost_us` is
/// the virtual proving time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityProof {
    pub chunk_digest: DigestBytes,
    pub pre_state_root: DigestBytes,
    pub post_state_root: DigestBytes,
    pub prover: RoleId,
    pub modeled_cost_us: u64,
    pub attestation: DigestBytes,
}

fn attestation_payload(
    chunk_digest: &DigestBytes,
    pre: &DigestBytes,
    post: &DigestBytes,
) -> Vec<u8> {
    let mut enc = Enc::new();
    enc.digest(chunk_digest);
    enc.digest(pre);
    enc.digest(post);
    enc.finish()
}

pub fn proving_cost_us(policy: ProofPolicy, t_zk_p_us: u64, items: usize) -> u64 {
    match policy {
        ProofPolicy::PerChunk => t_zk_p_us,
        ProofPolicy::PerTransaction => t_zk_p_us * items as u64,
    }
}

/// Produce a proof for a verified chunk. Refuses when no verification is
/// presented: an honest producer never attests blind.
pub fn producer_make_proof(
    verification: Option<&VerifiedChunk>,
    prover: &RoleId,
    policy: ProofPolicy,
    t_zk_p_us: u64,
) -> Result<ValidityProof, SynchroError> {
    let v = verification.ok_or(SynchroError::RefusedUnverifiedChunk)?;
    let attestation = keyed_digest(
        "proof",
        &prover.key(),
        &attestation_payload(&v.chunk_digest, &v.pre_state_root, &v.post_state_root),
    );
    Ok(ValidityProof {
        chunk_digest: v.chunk_digest,
        pre_state_root: v.pre_state_root,
        post_state_root: v.post_state_root,
        prover: prover.clone(),
        modeled_cost_us: proving_cost_us(policy, t_zk_p_us, v.items),
        attestation,
    })
}

/// Fabricate a proof without verifying anything. With `sound_system` set
/// (the default everywhere), the proof system is sound and the forgery
/// cannot carry a convincing attestation; disabling soundness models a
/// broken proof system where the forgery verifies.
pub fn forge_proof(
    chunk_digest: DigestBytes,
    pre: DigestBytes,
    post: DigestBytes,
    prover: &RoleId,
    policy: ProofPolicy,
    t_zk_p_us: u64,
    sound_system: bool,
) -> ValidityProof {
    let attestation = if sound_system {
        hash_tagged("forged-proof", &attestation_payload(&chunk_digest, &pre, &post))
    } else {
        keyed_digest("proof", &prover.key(), &attestation_payload(&chunk_digest, &pre, &post))
    };
    ValidityProof {
        chunk_digest,
        pre_state_root: pre,
        post_state_root: post,
        prover: prover.clone(),
        modeled_cost_us: proving_cost_us(policy, t_zk_p_us, 1),
        attestation,
    }
}

/// Stateless proof check against the chunk as received.
pub fn verify_proof(proof: &ValidityProof, chunk: &Chunk) -> Result<(), String> {
    if chunk.digest() != proof.chunk_digest {
        return Err("proof is for a different chunk".into());
    }
    if chunk.pre_state_root != proof.pre_state_root
        || chunk.post_state_root != proof.post_state_root
    {
        return Err("proof roots do not match the chunk".into());
    }
    let expected = keyed_digest(
        "proof",
        &proof.prover.key(),
        &attestation_payload(&proof.chunk_digest, &proof.pre_state_root, &proof.post_state_root),
    );
    if proof.attestation != expected {
        return Err("attestation does not verify".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GvError {
    #[error("no chunk for shard {0}")]
    IncompleteGroup(ShardId),
    #[error("proof for shard {shard} rejected: {why}")]
    ProofInvalid { shard: ShardId, why: String },
    #[error(transparent)]
    Atomicity(#[from] AtomicityViolation),
    #[error("bad candidate linkage: {0}")]
    BadLinkage(String),
}

/// What a global validator remembers about the chain it finalized: just
/// hashes and roots, never shard state.
#[derive(Clone, Debug)]
pub struct GvView {
    pub height: u64,
    pub block_hash: DigestBytes,
    pub post_roots: Vec<DigestBytes>,
}

impl GvView {
    pub fn genesis(block: &Block) -> Self {
        GvView {
            height: block.height,
            block_hash: block.hash,
            post_roots: block.chunks.iter().map(|c| c.post_state_root).collect(),
        }
    }
}

/// Reconstruct a block from one coordinator's chunk group and validate it
/// end to end. On success the returned block extends `prev`.
pub fn gv_reconstruct_and_finalize(
    header: &CandidateHeader,
    chunks: &[Chunk],
    proofs: &[ValidityProof],
    prev: &GvView,
    shard_count: u32,
) -> Result<Block, GvError> {
    let mut by_shard: Vec<Option<(&Chunk, &ValidityProof)>> = vec![None; shard_count as usize];
    for (chunk, proof) in chunks.iter().zip(proofs) {
        let idx = chunk.shard as usize;
        if idx >= by_shard.len() {
            return Err(GvError::BadLinkage(format!("chunk for unknown shard {}", chunk.shard)));
        }
        if by_shard[idx].is_some() {
            return Err(GvError::BadLinkage(format!("two chunks for shard {}", chunk.shard)));
        }
        by_shard[idx] = Some((chunk, proof));
    }
    if let Some(missing) = by_shard.iter().position(|s| s.is_none()) {
        return Err(GvError::IncompleteGroup(missing as u32));
    }

    if !header.signature_valid() {
        return Err(GvError::BadLinkage("bad coordinator signature".into()));
    }
    if header.height != prev.height + 1 {
        return Err(GvError::BadLinkage(format!(
            "candidate height {} does not extend height {}",
            header.height, prev.height
        )));
    }
    if header.parent != prev.block_hash {
        return Err(GvError::BadLinkage("candidate parent is not the finalized tip".into()));
    }

    let ordered: Vec<&Chunk> = by_shard.iter().map(|s| s.unwrap().0).collect();
    for (shard, (chunk, proof)) in by_shard.iter().map(|s| s.unwrap()).enumerate() {
        if chunk.height != header.height {
            return Err(GvError::BadLinkage(format!("chunk height mismatch on shard {shard}")));
        }
        if chunk.block_hash != Some(header.hash) {
            return Err(GvError::BadLinkage(format!(
                "chunk on shard {shard} embeds a different block hash"
            )));
        }
        if chunk.pre_state_root != prev.post_roots[shard] {
            return Err(GvError::ProofInvalid {
                shard: shard as u32,
                why: "pre-state root does not extend the finalized state".into(),
            });
        }
        verify_proof(proof, chunk)
            .map_err(|why| GvError::ProofInvalid { shard: shard as u32, why })?;
    }

    let recomputed = compute_block_hash(
        header.height,
        &header.parent,
        &header.coordinator,
        &ordered.iter().map(|c| c.digest_sans_block_hash()).collect::<Vec<_>>(),
    );
    if recomputed != header.hash {
        return Err(GvError::BadLinkage("block hash does not match its chunks".into()));
    }

    let owned: Vec<Chunk> = ordered.into_iter().cloned().collect();
    check_atomicity(&owned, shard_count)?;

    Ok(Block { height: header.height, parent: header.parent, hash: header.hash, chunks: owned })
}

/// Pick the coordinator to serve for one height: rotation over the
/// coordinators in good standing (fewest faults), offset by the producer's
/// own index so ties still get sampled evenly. A coordinator whose block
/// was rejected falls out of the rotation until everyone else has offended
/// as often.
pub fn producer_pick_coordinator(
    trust: &TrustLedger,
    coordinators: &[RoleId],
    height: u64,
    producer_salt: u64,
) -> RoleId {
    let leaders = trust.leaders(coordinators);
    let idx = ((height + producer_salt) % leaders.len() as u64) as usize;
    leaders[idx].clone()
}

/// Producer preference order for one shard at one height: clean records
/// before faulted ones, more finalized contributions before fewer, and a
/// height rotation to break the remaining ties. A producer caught handing
/// out a bad proof sinks below every clean peer, so the retry walk reaches
/// an honest producer as long as one exists.
pub fn gv_rank_producers(trust: &TrustLedger, producers: &[RoleId], height: u64) -> Vec<RoleId> {
    let mut ranked: Vec<(u64, u64, u64, RoleId)> = producers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rotation = (i as u64 + height) % producers.len() as u64;
            (trust.fault_count(r), trust.score(r), rotation, r.clone())
        })
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    ranked.into_iter().map(|(_, _, _, r)| r).collect()
}

/// Block tree with signature-weight fork choice.
#[derive(Debug)]
pub struct BlockTree {
    nodes: BTreeMap<DigestBytes, TreeNode>,
    root: DigestBytes,
}

#[derive(Debug)]
struct TreeNode {
    height: u64,
    parent: DigestBytes,
    signers: BTreeSet<String>,
}

impl BlockTree {
    pub fn new(root_hash: DigestBytes, root_height: u64) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root_hash,
            TreeNode { height: root_height, parent: DigestBytes::ZERO, signers: BTreeSet::new() },
        );
        BlockTree { nodes, root: root_hash }
    }

    pub fn contains(&self, hash: &DigestBytes) -> bool {
        self.nodes.contains_key(hash)
    }

    pub fn insert(&mut self, hash: DigestBytes, parent: DigestBytes, height: u64) -> bool {
        if self.nodes.contains_key(&hash) {
            return false;
        }
        debug_assert!(self.nodes.contains_key(&parent), "parent must be known");
        self.nodes.insert(hash, TreeNode { height, parent, signers: BTreeSet::new() });
        true
    }

    /// Record one finalizing signature. Returns false if already recorded.
    pub fn sign(&mut self, hash: &DigestBytes, signer: &RoleId) -> bool {
        match self.nodes.get_mut(hash) {
            Some(node) => node.signers.insert(signer.key()),
            None => false,
        }
    }

    pub fn signature_count(&self, hash: &DigestBytes) -> usize {
        self.nodes.get(hash).map(|n| n.signers.len()).unwrap_or(0)
    }

    pub fn height(&self, hash: &DigestBytes) -> Option<u64> {
        self.nodes.get(hash).map(|n| n.height)
    }

    fn cumulative_weight(&self, mut hash: DigestBytes) -> u64 {
        let mut weight = 0;
        while let Some(node) = self.nodes.get(&hash) {
            weight += node.signers.len() as u64;
            if hash == self.root {
                break;
            }
            hash = node.parent;
        }
        weight
    }

    /// Tip of the chain with the greatest cumulative signature count;
    /// among equals, the lowest tip hash.
    pub fn fork_choice(&self) -> DigestBytes {
        let mut children: BTreeSet<&DigestBytes> = BTreeSet::new();
        for node in self.nodes.values() {
            children.insert(&node.parent);
        }
        let mut best: Option<(u64, DigestBytes)> = None;
        for hash in self.nodes.keys() {
            if children.contains(hash) && *hash != self.root {
                continue;
            }
            if *hash == self.root && self.nodes.len() > 1 && children.contains(hash) {
                continue;
            }
            let weight = self.cumulative_weight(*hash);
            best = match best {
                None => Some((weight, *hash)),
                Some((w, h)) => {
                    if weight > w || (weight == w && *hash < h) {
                        Some((weight, *hash))
                    } else {
                        Some((w, h))
                    }
                }
            };
        }
        best.map(|(_, h)| h).unwrap_or(self.root)
    }

    /// Hashes from the root to the given tip, inclusive.
    pub fn chain_to(&self, tip: &DigestBytes) -> Vec<DigestBytes> {
        let mut chain = Vec::new();
        let mut cursor = *tip;
        while let Some(node) = self.nodes.get(&cursor) {
            chain.push(cursor);
            if cursor == self.root {
                break;
            }
            cursor = node.parent;
        }
        chain.reverse();
        chain
    }
}
