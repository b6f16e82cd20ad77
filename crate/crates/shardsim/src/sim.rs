//! The two simulation engines.
//!
//! Both run on a virtual clock of integer microseconds and step through
//! block slots. The two-phase baseline is a straight slot loop: produce,
//! deliver receipts next height, challenge and roll back when a receipt
//! reverts after its phase one applied. The atomic-block engine pipelines:
//! the coordinator assembles a candidate every slot on top of its own
//! unfinalized chain, producers re-execute and prove as they free up, and
//! the global validator finalizes serially, so the finalization interval is
//! set by whichever stage is slowest, never by cross-shard coordination.
//!
//! Every accepted block is followed by a value-conservation audit; a
//! violation aborts the run rather than producing a report from a broken
//! ledger.

use crate::block::{compute_block_hash, Block, Chunk};
use crate::digest::{hash_tagged, DigestBytes, Enc};
use crate::incentives::{RewardLedger, TrustLedger};
use crate::ledger::{shard_of, LedgerState, Transaction, Yocto};
use crate::metrics::{
    compute_stalls, longest_stall_us, stall_total_us, ForkSummary, HeightSample, MetricsReport,
};
use crate::nightshade::ChainView;
use crate::params::SimulationParams;
use crate::roles::RoleId;
use crate::scenario::{FaultKind, ScenarioSpec};
use crate::synchro::{
    coordinator_build_block, gv_rank_producers, gv_reconstruct_and_finalize, producer_make_proof,
    producer_pick_coordinator, producer_verify_chunk, proving_cost_us, forge_proof, BlockTree,
    BuildTweaks, CandidateBlock, CandidateHeader, GvError, GvView, ValidityProof, VerifiedChunk,
};
use crate::workload::{genesis_states, WorkloadGen};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Baseline,
    Synchro,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::Synchro => "synchro",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Protocol::Baseline),
            "synchro" => Ok(Protocol::Synchro),
            other => Err(format!("unknown protocol {other:?} (expected baseline or synchro)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub struct RunOutput {
    pub report: MetricsReport,
    pub series: Vec<HeightSample>,
    pub final_states: Vec<LedgerState>,
}

/// How many candidates the coordinator keeps in flight before it stops
/// building and waits for finalization to catch up.
const MAX_PENDING_DEPTH: usize = 3;

/// Finalized blocks skipped before measuring the steady interval.
const INTERVAL_WARMUP: usize = 3;

pub fn run(spec: &ScenarioSpec, protocol: Protocol, seed: u64) -> Result<RunOutput, SimError> {
    run_impl(spec, protocol, seed, false).map(|(out, _)| out)
}

/// Like [`run`], but also returns every finalized block in height order so
/// callers can audit the chain content directly. Retaining blocks costs
/// memory proportional to the whole run; use plain [`run`] for large
/// scenarios.
pub fn run_with_blocks(
    spec: &ScenarioSpec,
    protocol: Protocol,
    seed: u64,
) -> Result<(RunOutput, Vec<Block>), SimError> {
    run_impl(spec, protocol, seed, true)
}

fn run_impl(
    spec: &ScenarioSpec,
    protocol: Protocol,
    seed: u64,
    keep_blocks: bool,
) -> Result<(RunOutput, Vec<Block>), SimError> {
    spec.params
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    match protocol {
        Protocol::Baseline => run_baseline(spec, seed, keep_blocks),
        Protocol::Synchro => {
            let mut engine = SynchroEngine::new(spec, seed)?;
            engine.keep_blocks = keep_blocks;
            engine.run()
        }
    }
}

fn stall_threshold_us(params: &SimulationParams) -> u64 {
    3 * params.t_block_us
}

/// Mean gap between consecutive event times after the warmup prefix.
fn mean_interval_us(times: &[u64], warmup: usize) -> Option<f64> {
    let tail = times.get(warmup..).unwrap_or(&[]);
    if tail.len() < 2 {
        return None;
    }
    Some((tail[tail.len() - 1] - tail[0]) as f64 / (tail.len() - 1) as f64)
}

fn report_skeleton(spec: &ScenarioSpec, protocol: Protocol, seed: u64) -> MetricsReport {
    let p = &spec.params;
    MetricsReport {
        scenario: spec.name.clone(),
        protocol: protocol.as_str().to_string(),
        seed,
        shard_count: p.shard_count,
        duration_us: spec.duration_us,
        final_height: 0,
        canonical_tip: String::new(),
        blocks_finalized: 0,
        rollbacks: 0,
        challenges: 0,
        rejected_candidates: 0,
        proof_retries: 0,
        txs_submitted: 0,
        txs_applied: 0,
        txs_rejected: 0,
        receipts_applied: 0,
        modeled_tps: p.modeled_tps(),
        measured_tps: 0.0,
        producer_stage_us: p.producer_stage_us(),
        gv_serial_us: p.gv_serial_verify_us(),
        steady_interval_us: p.steady_interval_us(),
        pipeline_ok: p.producer_stage_fits_block() && p.validation_keeps_pace(),
        measured_interval_us: None,
        stall_threshold_us: stall_threshold_us(p),
        stall_total_us: 0,
        longest_stall_us: 0,
        stall_windows: Vec::new(),
        trust: BTreeMap::new(),
        rewards: BTreeMap::new(),
        forks: Vec::new(),
    }
}

fn finish_stalls(report: &mut MetricsReport, series: &[HeightSample], duration_us: u64) {
    let windows = compute_stalls(series, duration_us, report.stall_threshold_us);
    report.stall_total_us = stall_total_us(&windows);
    report.longest_stall_us = longest_stall_us(&windows);
    report.stall_windows = windows;
}

fn run_baseline(
    spec: &ScenarioSpec,
    seed: u64,
    keep_blocks: bool,
) -> Result<(RunOutput, Vec<Block>), SimError> {
    let params = &spec.params;
    let shard_count = params.shard_count;
    let t_block = params.t_block_us;
    let states = genesis_states(shard_count, &spec.genesis_accounts());
    let genesis_total: Yocto = states.iter().map(|s| s.total_balance()).sum();

    let mut view = ChainView::new(shard_count, params.polarity, params.max_txs_per_chunk, states);
    view.refund_gas = params.refund_gas;
    view.blacklist_offender = params.blacklist_offender;
    view.retain_blocks = params.retain_blocks as usize;

    let gen = WorkloadGen::new(seed, spec.workload.clone(), shard_count);
    let mut mempools: Vec<VecDeque<Transaction>> = vec![VecDeque::new(); shard_count as usize];
    let mut series: Vec<HeightSample> = Vec::new();
    let mut produce_times: Vec<u64> = Vec::new();
    let mut report = report_skeleton(spec, Protocol::Baseline, seed);
    let mut pending_challenge = None;

    let attack = spec.attack.clone();
    // Rounds past the first are armed by the rollback that ends the
    // previous round.
    let mut next_round: u32 = 0;

    let total_slots = spec.duration_us / t_block;
    for slot in 1..=total_slots {
        let now = slot * t_block;

        let mut arrivals = gen.window_txs(slot - 1, (slot - 1) * t_block, t_block);
        if let Some(plan) = &attack {
            if next_round == 0 && plan.rounds > 0 && plan.start_us < now {
                arrivals.push((plan.start_us, plan.deposit_tx(0)));
                next_round = 1;
            }
        }
        arrivals.sort_by_key(|(t, _)| *t);
        for (_, tx) in arrivals {
            report.txs_submitted += 1;
            mempools[shard_of(&tx.sender, shard_count) as usize].push_back(tx);
        }

        if let Some(challenge) = pending_challenge.take() {
            // The rollback consumes this slot; no block is produced.
            let outcome = view
                .rollback(&challenge)
                .map_err(|e| SimError::Invariant(format!("rollback failed: {e}")))?;
            for tx in outcome.reinstated.iter().rev() {
                mempools[shard_of(&tx.sender, shard_count) as usize].push_front(tx.clone());
            }
            series.push(HeightSample { t_us: now, height: outcome.new_tip });
            if let Some(plan) = &attack {
                if outcome.offender.sender == plan.attacker && next_round < plan.rounds {
                    report.txs_submitted += 1;
                    mempools[shard_of(&plan.attacker, shard_count) as usize]
                        .push_back(plan.deposit_tx(next_round));
                    next_round += 1;
                }
            }
        } else {
            let mut chunks = Vec::with_capacity(shard_count as usize);
            for shard in 0..shard_count {
                let queue = &mut mempools[shard as usize];
                let mut txs = Vec::new();
                while txs.len() < params.max_txs_per_chunk {
                    match queue.pop_front() {
                        Some(tx) if view.is_blacklisted(&tx.id) => continue,
                        Some(tx) => txs.push(tx),
                        None => break,
                    }
                }
                let chunk = view
                    .produce_chunk(shard, txs, RoleId::producer(shard, 0))
                    .map_err(|e| SimError::Invariant(format!("chunk production: {e}")))?;
                chunks.push(chunk);
            }
            let block = view
                .assemble_block(chunks)
                .map_err(|e| SimError::Invariant(format!("block assembly: {e}")))?;
            series.push(HeightSample { t_us: now, height: block.height });
            produce_times.push(now);
            report.blocks_finalized += 1;
            if let Some(challenge) = view.detect_inconsistency() {
                report.challenges += 1;
                pending_challenge = Some(challenge);
            }
        }

        let circulating = view.total_balances() + view.total_gas_burned() + view.escrowed_value();
        if circulating != genesis_total {
            return Err(SimError::Invariant(format!(
                "value not conserved at {now}us: circulating {circulating}, genesis {genesis_total}"
            )));
        }
    }

    view.verify_state_matches_tip().map_err(SimError::Invariant)?;
    view.verify_receipt_deferral().map_err(SimError::Invariant)?;

    report.final_height = view.tip_height();
    report.canonical_tip = view.tip_hash().to_hex();
    report.rollbacks = view.rollback_count;
    report.txs_applied = view.applied_tx_total;
    report.receipts_applied = view.applied_receipt_total;
    report.measured_tps = report.txs_applied as f64 * 1_000_000.0 / spec.duration_us as f64;
    report.measured_interval_us = mean_interval_us(&produce_times, INTERVAL_WARMUP);
    finish_stalls(&mut report, &series, spec.duration_us);

    let final_states = (0..shard_count).map(|s| view.state(s).clone()).collect();
    let blocks = if keep_blocks {
        (0..=view.tip_height()).filter_map(|h| view.block(h).cloned()).collect()
    } else {
        Vec::new()
    };
    Ok((RunOutput { report, series, final_states }, blocks))
}

/// Genesis block shared by the whole network: one empty chunk per shard.
fn genesis_block(states: &[LedgerState]) -> Block {
    let chunks: Vec<Chunk> = states
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
        &chunks.iter().map(|c| c.digest_sans_block_hash()).collect::<Vec<_>>(),
    );
    Block { height: 0, parent: DigestBytes::ZERO, hash, chunks }
}

struct PendingBlock {
    candidate: CandidateBlock,
    header: CandidateHeader,
    verified: Vec<VerifiedChunk>,
    proofs: Vec<ValidityProof>,
    forged: Vec<bool>,
    /// Producer to credit per shard; replaced on each retry.
    credited: Vec<RoleId>,
    /// Full preference order per shard, so retries can walk past several
    /// bad producers in a row.
    ranking: Vec<Vec<RoleId>>,
    /// Next index into `ranking` to try after a failed proof.
    rank_next: Vec<usize>,
    proofs_ready_us: u64,
}

struct ByzFork {
    gv: RoleId,
    tip: DigestBytes,
    height: u64,
}

struct SynchroEngine<'a> {
    spec: &'a ScenarioSpec,
    seed: u64,
    coordinators: Vec<RoleId>,
    producers: Vec<Vec<RoleId>>,
    honest_gvs: Vec<RoleId>,
    byz_forks: Vec<ByzFork>,
    coord_tweaks: BTreeMap<String, BuildTweaks>,
    bad_proof_producers: BTreeSet<String>,

    tree: BlockTree,
    prev_gv: GvView,
    canonical_states: Vec<LedgerState>,
    honest_tip: DigestBytes,
    honest_tip_height: u64,
    genesis_total: Yocto,

    trust: TrustLedger,
    rewards: RewardLedger,
    mempool: VecDeque<Transaction>,
    pending: VecDeque<PendingBlock>,
    producer_free: BTreeMap<String, u64>,
    gv_free_us: u64,

    report: MetricsReport,
    series: Vec<HeightSample>,
    finalize_times: Vec<u64>,
    keep_blocks: bool,
    kept_blocks: Vec<Block>,
}

impl<'a> SynchroEngine<'a> {
    fn new(spec: &'a ScenarioSpec, seed: u64) -> Result<Self, SimError> {
        let params = &spec.params;
        let coordinators: Vec<RoleId> =
            (0..spec.roles.coordinators).map(RoleId::coordinator).collect();
        let producers: Vec<Vec<RoleId>> = (0..params.shard_count)
            .map(|s| {
                (0..spec.roles.producers_per_shard)
                    .map(|i| RoleId::producer(s, i))
                    .collect()
            })
            .collect();
        let gvs: Vec<RoleId> =
            (0..spec.roles.global_validators).map(RoleId::global_validator).collect();

        let mut coord_tweaks: BTreeMap<String, BuildTweaks> = BTreeMap::new();
        let mut bad_proof_producers: BTreeSet<String> = BTreeSet::new();
        let mut byz_gv_keys: BTreeSet<String> = BTreeSet::new();
        for f in &spec.faults {
            match &f.kind {
                FaultKind::IgnoreUser(user) => {
                    coord_tweaks.entry(f.role.key()).or_default().ignore_sender =
                        Some(user.clone());
                }
                FaultKind::CstxOnlyBlocks => {
                    coord_tweaks.entry(f.role.key()).or_default().strip_receipts = true;
                }
                FaultKind::BadProofs => {
                    bad_proof_producers.insert(f.role.key());
                }
                FaultKind::SelfFork => {
                    byz_gv_keys.insert(f.role.key());
                }
            }
        }
        for (shard, group) in producers.iter().enumerate() {
            if group.iter().all(|p| bad_proof_producers.contains(&p.key())) {
                return Err(SimError::Config(format!(
                    "every producer on shard {shard} serves bad proofs; no fallback left"
                )));
            }
        }
        let honest_gvs: Vec<RoleId> =
            gvs.iter().filter(|g| !byz_gv_keys.contains(&g.key())).cloned().collect();
        if honest_gvs.is_empty() {
            return Err(SimError::Config("every global validator is faulty".into()));
        }
        let byz_forks: Vec<ByzFork> = gvs
            .iter()
            .filter(|g| byz_gv_keys.contains(&g.key()))
            .map(|g| ByzFork { gv: g.clone(), tip: DigestBytes::ZERO, height: 0 })
            .collect();

        let canonical_states = genesis_states(params.shard_count, &spec.genesis_accounts());
        let genesis_total: Yocto = canonical_states.iter().map(|s| s.total_balance()).sum();
        let genesis = genesis_block(&canonical_states);
        let mut byz_forks = byz_forks;
        for fork in &mut byz_forks {
            fork.tip = genesis.hash;
        }

        Ok(SynchroEngine {
            spec,
            seed,
            coordinators,
            producers,
            honest_gvs,
            byz_forks,
            coord_tweaks,
            bad_proof_producers,
            tree: BlockTree::new(genesis.hash, 0),
            prev_gv: GvView::genesis(&genesis),
            honest_tip: genesis.hash,
            honest_tip_height: 0,
            canonical_states,
            genesis_total,
            trust: TrustLedger::new(),
            rewards: RewardLedger::new(spec.roles.reward_per_block),
            mempool: VecDeque::new(),
            pending: VecDeque::new(),
            producer_free: BTreeMap::new(),
            gv_free_us: 0,
            report: report_skeleton(spec, Protocol::Synchro, seed),
            series: Vec::new(),
            finalize_times: Vec::new(),
            keep_blocks: false,
            kept_blocks: Vec::new(),
        })
    }

    fn run(mut self) -> Result<(RunOutput, Vec<Block>), SimError> {
        let t_block = self.spec.params.t_block_us;
        let gen = WorkloadGen::new(self.seed, self.spec.workload.clone(), self.spec.params.shard_count);

        let mut deposits: VecDeque<(u64, Transaction)> = VecDeque::new();
        if let Some(plan) = &self.spec.attack {
            for round in 0..plan.rounds {
                let due = plan.start_us + round as u64 * plan.round_period_us(t_block);
                if due < self.spec.duration_us {
                    deposits.push_back((due, plan.deposit_tx(round)));
                }
            }
        }

        let total_slots = self.spec.duration_us / t_block;
        for slot in 1..=total_slots {
            let now = slot * t_block;
            self.process_ready(now)?;

            let mut arrivals = gen.window_txs(slot - 1, (slot - 1) * t_block, t_block);
            while deposits.front().is_some_and(|(due, _)| *due < now) {
                let (due, tx) = deposits.pop_front().unwrap();
                arrivals.push((due, tx));
            }
            arrivals.sort_by_key(|(t, _)| *t);
            for (_, tx) in arrivals {
                self.report.txs_submitted += 1;
                self.mempool.push_back(tx);
            }

            if self.pending.len() < MAX_PENDING_DEPTH {
                self.build_candidate(slot, now)?;
            }
        }
        self.process_ready(self.spec.duration_us)?;
        self.finish()
    }

    fn build_candidate(&mut self, slot: u64, now: u64) -> Result<(), SimError> {
        let params = &self.spec.params;
        let shard_count = params.shard_count;

        let (parent_hash, parent_height, parent_states) = match self.pending.back() {
            Some(p) => (
                p.candidate.hash,
                p.candidate.height,
                p.verified.iter().map(|v| v.post_state.clone()).collect::<Vec<_>>(),
            ),
            None => (self.honest_tip, self.honest_tip_height, self.canonical_states.clone()),
        };
        let height = parent_height + 1;

        let coordinator = producer_pick_coordinator(&self.trust, &self.coordinators, slot, 0);
        let default_tweaks = BuildTweaks::default();
        let tweaks = self.coord_tweaks.get(&coordinator.key()).unwrap_or(&default_tweaks);

        let outcome = coordinator_build_block(
            &coordinator,
            parent_hash,
            height,
            &parent_states,
            self.mempool.make_contiguous(),
            shard_count,
            params.max_txs_per_chunk,
            params.polarity,
            tweaks,
        );

        let mut consumed: BTreeSet<DigestBytes> = BTreeSet::new();
        for chunk in &outcome.candidate.chunks {
            consumed.extend(chunk.transactions.iter().map(|tx| tx.id));
        }
        self.report.txs_rejected += outcome.rejected.len() as u64;
        for (tx, _) in &outcome.rejected {
            consumed.insert(tx.id);
        }
        if !consumed.is_empty() {
            self.mempool.retain(|tx| !consumed.contains(&tx.id));
        }

        let candidate = outcome.candidate;
        let header = candidate.header();
        let mut verified = Vec::with_capacity(shard_count as usize);
        let mut proofs = Vec::with_capacity(shard_count as usize);
        let mut forged = vec![false; shard_count as usize];
        let mut credited = Vec::with_capacity(shard_count as usize);
        let mut ranking = Vec::with_capacity(shard_count as usize);
        let mut proofs_ready = now;

        for shard in 0..shard_count as usize {
            let ranked = gv_rank_producers(&self.trust, &self.producers[shard], height);
            let serving = ranked[0].clone();
            let chunk = &candidate.chunks[shard];
            let v = producer_verify_chunk(
                chunk,
                &candidate,
                &parent_states[shard],
                shard_count,
                params.max_txs_per_chunk,
                params.polarity,
            )
            .map_err(|e| {
                SimError::Invariant(format!(
                    "producer disagrees with coordinator on shard {shard} at height {height}: {e}"
                ))
            })?;

            if self.bad_proof_producers.contains(&serving.key()) {
                // The forger answers instantly: it neither executed nor
                // proved anything.
                proofs.push(forge_proof(
                    chunk.digest(),
                    chunk.pre_state_root,
                    chunk.post_state_root,
                    &serving,
                    params.proof_policy,
                    params.t_zk_p_us,
                    true,
                ));
                forged[shard] = true;
            } else {
                let free = self.producer_free.get(&serving.key()).copied().unwrap_or(0);
                let done = now.max(free)
                    + params.t_chunk_us
                    + proving_cost_us(params.proof_policy, params.t_zk_p_us, v.items);
                self.producer_free.insert(serving.key(), done);
                proofs.push(
                    producer_make_proof(Some(&v), &serving, params.proof_policy, params.t_zk_p_us)
                        .expect("verification was presented"),
                );
                proofs_ready = proofs_ready.max(done);
            }
            credited.push(serving);
            ranking.push(ranked);
            verified.push(v);
        }

        let rank_next = vec![1usize; shard_count as usize];
        self.pending.push_back(PendingBlock {
            candidate,
            header,
            verified,
            proofs,
            forged,
            credited,
            ranking,
            rank_next,
            proofs_ready_us: proofs_ready,
        });
        Ok(())
    }

    /// Finalize or reject pending candidates whose validation would start
    /// by `limit`.
    fn process_ready(&mut self, limit: u64) -> Result<(), SimError> {
        let params = &self.spec.params;
        loop {
            let Some(head) = self.pending.front() else { return Ok(()) };
            let start = head.proofs_ready_us.max(self.gv_free_us);
            if start > limit {
                return Ok(());
            }
            let mut finalize_at = start + params.gv_serial_verify_us();

            let mut head = self.pending.pop_front().unwrap();
            let result = loop {
                match gv_reconstruct_and_finalize(
                    &head.header,
                    &head.candidate.chunks,
                    &head.proofs,
                    &self.prev_gv,
                    params.shard_count,
                ) {
                    Ok(block) => break Ok(block),
                    Err(GvError::ProofInvalid { shard, why }) => {
                        let idx = shard as usize;
                        if !head.forged[idx] {
                            return Err(SimError::Invariant(format!(
                                "honest proof rejected on shard {shard}: {why}"
                            )));
                        }
                        self.trust.punish(&head.credited[idx]);
                        let next = head.rank_next[idx];
                        head.rank_next[idx] += 1;
                        let Some(fb) = head.ranking[idx].get(next).cloned() else {
                            break Err(GvError::ProofInvalid { shard, why });
                        };
                        // Re-request the chunk proof from the next ranked
                        // producer, then verify just that proof again.
                        if self.bad_proof_producers.contains(&fb.key()) {
                            let chunk = &head.candidate.chunks[idx];
                            head.proofs[idx] = forge_proof(
                                chunk.digest(),
                                chunk.pre_state_root,
                                chunk.post_state_root,
                                &fb,
                                params.proof_policy,
                                params.t_zk_p_us,
                                true,
                            );
                            finalize_at += params.t_zk_v_us;
                        } else {
                            let free = self.producer_free.get(&fb.key()).copied().unwrap_or(0);
                            let done = finalize_at.max(free)
                                + params.t_chunk_us
                                + proving_cost_us(
                                    params.proof_policy,
                                    params.t_zk_p_us,
                                    head.verified[idx].items,
                                );
                            self.producer_free.insert(fb.key(), done);
                            finalize_at = done + params.t_zk_v_us;
                            head.proofs[idx] = producer_make_proof(
                                Some(&head.verified[idx]),
                                &fb,
                                params.proof_policy,
                                params.t_zk_p_us,
                            )
                            .expect("verification was presented");
                            head.forged[idx] = false;
                        }
                        head.credited[idx] = fb;
                        self.report.proof_retries += 1;
                    }
                    Err(e) => break Err(e),
                }
            };
            self.gv_free_us = finalize_at;

            match result {
                Ok(block) => self.accept(head, block, finalize_at)?,
                Err(_) => {
                    self.report.rejected_candidates += 1;
                    self.trust.punish(&head.candidate.coordinator);
                    // Drop the rejected candidate and everything built on
                    // top of it; give their transactions back to the pool.
                    let mut orphans = vec![head];
                    orphans.extend(self.pending.drain(..));
                    for pending in orphans.iter().rev() {
                        for chunk in pending.candidate.chunks.iter().rev() {
                            for tx in chunk.transactions.iter().rev() {
                                self.mempool.push_front(tx.clone());
                            }
                        }
                    }
                }
            }
        }
    }

    fn accept(
        &mut self,
        head: PendingBlock,
        block: Block,
        finalize_at: u64,
    ) -> Result<(), SimError> {
        self.canonical_states = head.verified.into_iter().map(|v| v.post_state).collect();

        let balances: Yocto = self.canonical_states.iter().map(|s| s.total_balance()).sum();
        let gas: Yocto = self.canonical_states.iter().map(|s| s.gas_burned_total).sum();
        if balances + gas != self.genesis_total {
            return Err(SimError::Invariant(format!(
                "value not conserved at height {}: balances {balances} + gas {gas} != {}",
                block.height, self.genesis_total
            )));
        }

        self.report.blocks_finalized += 1;
        for chunk in &block.chunks {
            self.report.txs_applied += chunk.transactions.len() as u64;
            self.report.receipts_applied += chunk.receipts.len() as u64;
        }

        self.trust.bump(&head.candidate.coordinator);
        self.rewards.credit(block.hash, &head.candidate.coordinator);
        for producer in &head.credited {
            self.trust.bump(producer);
            self.rewards.credit(block.hash, producer);
        }
        self.tree.insert(block.hash, block.parent, block.height);
        for gv in &self.honest_gvs.clone() {
            self.tree.sign(&block.hash, gv);
            self.trust.bump(gv);
            self.rewards.credit(block.hash, gv);
        }

        // Each withholding validator extends its private chain instead of
        // signing the finalized block.
        for i in 0..self.byz_forks.len() {
            let (parent, height, key) = {
                let f = &self.byz_forks[i];
                (f.tip, f.height + 1, f.gv.key())
            };
            let mut enc = Enc::new();
            enc.str(&key);
            enc.u64(height);
            enc.digest(&parent);
            let hash = hash_tagged("self-fork", &enc.finish());
            self.tree.insert(hash, parent, height);
            let gv = self.byz_forks[i].gv.clone();
            self.tree.sign(&hash, &gv);
            self.byz_forks[i].tip = hash;
            self.byz_forks[i].height = height;
        }

        self.prev_gv = GvView {
            height: block.height,
            block_hash: block.hash,
            post_roots: self.canonical_states.iter().map(|s| s.state_root()).collect(),
        };
        self.honest_tip = block.hash;
        self.honest_tip_height = block.height;
        self.series.push(HeightSample { t_us: finalize_at, height: block.height });
        self.finalize_times.push(finalize_at);
        if self.keep_blocks {
            self.kept_blocks.push(block);
        }
        Ok(())
    }

    fn chain_weight(&self, tip: &DigestBytes) -> u64 {
        self.tree
            .chain_to(tip)
            .iter()
            .map(|h| self.tree.signature_count(h) as u64)
            .sum()
    }

    fn finish(mut self) -> Result<(RunOutput, Vec<Block>), SimError> {
        let canonical = self.tree.fork_choice();
        self.report.final_height = self.tree.height(&canonical).unwrap_or(0);
        self.report.canonical_tip = canonical.to_hex();
        self.report.measured_tps =
            self.report.txs_applied as f64 * 1_000_000.0 / self.spec.duration_us as f64;
        self.report.measured_interval_us = mean_interval_us(&self.finalize_times, INTERVAL_WARMUP);
        self.report.trust = self.trust.snapshot();
        self.report.rewards = self.rewards.snapshot();

        let mut forks = vec![ForkSummary {
            tip: self.honest_tip.to_hex(),
            height: self.honest_tip_height,
            weight: self.chain_weight(&self.honest_tip),
            canonical: canonical == self.honest_tip,
        }];
        for f in &self.byz_forks {
            if f.height > 0 {
                forks.push(ForkSummary {
                    tip: f.tip.to_hex(),
                    height: f.height,
                    weight: self.chain_weight(&f.tip),
                    canonical: canonical == f.tip,
                });
            }
        }
        self.report.forks = forks;
        finish_stalls(&mut self.report, &self.series, self.spec.duration_us);

        Ok((
            RunOutput {
                report: self.report,
                series: self.series,
                final_states: self.canonical_states,
            },
            self.kept_blocks,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackPlan;
    use crate::ledger::{AccountId, ContractKind, YOCTO_PER_TOKEN};
    use crate::params::ProofPolicy;
    use crate::scenario::{FaultSpec, RolesSpec};
    use crate::workload::WorkloadSpec;

    const NEAR: Yocto = YOCTO_PER_TOKEN;

    fn small_params() -> SimulationParams {
        SimulationParams { shard_count: 2, max_txs_per_chunk: 64, ..Default::default() }
    }

    fn spec_with(params: SimulationParams, workload: WorkloadSpec, duration_secs: u64) -> ScenarioSpec {
        ScenarioSpec {
            name: "test".into(),
            seed: 1,
            duration_us: duration_secs * 1_000_000,
            params,
            workload,
            extra_accounts: vec![],
            attack: None,
            roles: RolesSpec {
                coordinators: 1,
                producers_per_shard: 1,
                global_validators: 3,
                reward_per_block: 1,
            },
            faults: vec![],
        }
    }

    fn attack_spec(rounds: u32, duration_secs: u64) -> ScenarioSpec {
        let workload = WorkloadSpec { tx_rate_per_sec: 0.0, accounts: 0, ..Default::default() };
        let mut spec = spec_with(small_params(), workload, duration_secs);
        // sybil lives on shard 0, vaultco on shard 1, at two shards.
        spec.extra_accounts = vec![
            (AccountId::from("sybil"), 100 * NEAR, None),
            (
                AccountId::from("vaultco"),
                10 * NEAR,
                Some(ContractKind::AttackContract { threshold: NEAR }),
            ),
        ];
        spec.attack = Some(AttackPlan {
            attacker: "sybil".into(),
            contract: "vaultco".into(),
            deposit: NEAR,
            gas: NEAR / 1000,
            rounds,
            start_us: 0,
        });
        spec
    }

    #[test]
    fn baseline_attack_cycles_three_slots_per_round() {
        let spec = attack_spec(3, 20);
        let out = run(&spec, Protocol::Baseline, 1).unwrap();
        let r = &out.report;
        assert_eq!(r.rollbacks, 3);
        assert_eq!(r.challenges, 3);
        // Three rounds occupy slots 1 through 9; the remaining 11 slots
        // rebuild the chain from scratch.
        assert_eq!(r.final_height, 11);
        assert_eq!(r.blocks_finalized, 17);
        assert_eq!(r.txs_applied, 0);
        assert_eq!(r.receipts_applied, 0);
        // The attacker keeps the deposits but pays gas for every attempt.
        let shard = shard_of(&AccountId::from("sybil"), 2);
        let balance = out.final_states[shard as usize].balance(&"sybil".into()).unwrap();
        assert_eq!(balance, 100 * NEAR - 3 * (NEAR / 1000));
        // Heights never got past 2 while the attack ran.
        let during: Vec<u64> = out
            .series
            .iter()
            .filter(|s| s.t_us <= 9_000_000)
            .map(|s| s.height)
            .collect();
        assert_eq!(during.iter().max(), Some(&2));
    }

    #[test]
    fn synchro_rejects_every_deposit_without_rolling_back() {
        let spec = attack_spec(3, 20);
        let out = run(&spec, Protocol::Synchro, 1).unwrap();
        let r = &out.report;
        assert_eq!(r.rollbacks, 0);
        assert_eq!(r.challenges, 0);
        assert_eq!(r.txs_rejected, 3);
        assert_eq!(r.final_height, 19);
        assert!(r.stall_windows.is_empty(), "stalls: {:?}", r.stall_windows);
        // The attacker lost nothing but also moved nothing.
        let shard = shard_of(&AccountId::from("sybil"), 2);
        let balance = out.final_states[shard as usize].balance(&"sybil".into()).unwrap();
        assert_eq!(balance, 100 * NEAR);
    }

    #[test]
    fn cross_traffic_conserves_value_on_both_protocols() {
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 40.0,
            cstx_fraction: 0.5,
            ..Default::default()
        };
        let params = SimulationParams { shard_count: 4, max_txs_per_chunk: 32, ..Default::default() };
        let spec = spec_with(params, workload, 20);
        for protocol in [Protocol::Baseline, Protocol::Synchro] {
            let out = run(&spec, protocol, 7).unwrap();
            assert!(out.report.txs_applied > 200, "{protocol}: {}", out.report.txs_applied);
            assert!(out.report.receipts_applied > 50);
            assert_eq!(out.report.rollbacks, 0);
        }
    }

    #[test]
    fn same_seed_replays_identically() {
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 30.0,
            cstx_fraction: 0.4,
            ..Default::default()
        };
        let spec = spec_with(small_params(), workload, 15);
        let a = run(&spec, Protocol::Synchro, 9).unwrap();
        let b = run(&spec, Protocol::Synchro, 9).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.series, b.series);
        let c = run(&spec, Protocol::Synchro, 10).unwrap();
        assert_ne!(a.report.canonical_tip, c.report.canonical_tip);
    }

    #[test]
    fn rejected_coordinator_never_earns_trust() {
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 20.0,
            cstx_fraction: 0.6,
            ..Default::default()
        };
        let mut spec = spec_with(small_params(), workload, 15);
        spec.roles.coordinators = 2;
        spec.faults = vec![
            FaultSpec { role: RoleId::coordinator(1), kind: FaultKind::CstxOnlyBlocks },
            FaultSpec {
                role: RoleId::coordinator(1),
                kind: FaultKind::IgnoreUser("user1".into()),
            },
        ];
        let out = run(&spec, Protocol::Synchro, 3).unwrap();
        let r = &out.report;
        assert!(r.rejected_candidates >= 1);
        assert_eq!(r.trust.get("coordinator-1"), None);
        let honest = r.trust.get("coordinator-0").copied().unwrap_or(0);
        assert!(honest as i64 >= r.final_height as i64 - 1);
        assert!(r.final_height >= 12);
    }

    #[test]
    fn forged_proofs_fall_back_to_the_next_producer() {
        let workload = WorkloadSpec { accounts: 20, tx_rate_per_sec: 20.0, ..Default::default() };
        let mut spec = spec_with(small_params(), workload, 15);
        spec.roles.producers_per_shard = 2;
        spec.faults = vec![FaultSpec {
            role: RoleId::producer(0, 1),
            kind: FaultKind::BadProofs,
        }];
        let out = run(&spec, Protocol::Synchro, 4).unwrap();
        let r = &out.report;
        assert!(r.proof_retries >= 1);
        assert_eq!(r.trust.get("producer-0-1"), None);
        assert!(r.trust.get("producer-0-0").copied().unwrap_or(0) > 0);
        assert!(r.final_height >= 12, "height {}", r.final_height);
        assert!(r.stall_windows.is_empty());
    }

    #[test]
    fn withheld_signatures_cannot_outweigh_the_honest_chain() {
        let workload = WorkloadSpec { accounts: 20, tx_rate_per_sec: 10.0, ..Default::default() };
        let mut spec = spec_with(small_params(), workload, 10);
        spec.faults = vec![FaultSpec {
            role: RoleId::global_validator(2),
            kind: FaultKind::SelfFork,
        }];
        let out = run(&spec, Protocol::Synchro, 5).unwrap();
        let r = &out.report;
        assert_eq!(r.forks.len(), 2);
        assert!(r.forks[0].canonical);
        assert!(!r.forks[1].canonical);
        assert!(r.forks[0].weight > r.forks[1].weight);
        assert_eq!(r.trust.get("gv-2"), None);
        assert_eq!(r.canonical_tip, r.forks[0].tip);
    }

    #[test]
    fn slow_proving_policy_throttles_the_pipeline() {
        let params = SimulationParams {
            shard_count: 2,
            max_txs_per_chunk: 4,
            proof_policy: ProofPolicy::PerTransaction,
            ..Default::default()
        };
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 20.0,
            cstx_fraction: 0.0,
            ..Default::default()
        };
        let spec = spec_with(params, workload, 40);
        let out = run(&spec, Protocol::Synchro, 2).unwrap();
        let r = &out.report;
        assert!(!r.pipeline_ok);
        // Full chunks of four: 20ms execution plus four provings.
        assert_eq!(r.steady_interval_us, 1_660_000);
        let measured = r.measured_interval_us.unwrap();
        assert!(
            (measured - 1_660_000.0).abs() < 50_000.0,
            "measured interval {measured}"
        );
        assert!(r.final_height < 30);
    }

    #[test]
    fn retry_walk_skips_consecutive_bad_producers() {
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 20.0,
            ..Default::default()
        };
        let mut spec = spec_with(small_params(), workload, 15);
        spec.roles.producers_per_shard = 3;
        // At height 1 the rotation ranks producer 2 first and producer 0
        // second on each shard, so the walk must step past two forgers
        // before it reaches the honest producer 1.
        spec.faults = (0..2)
            .flat_map(|s| {
                [
                    FaultSpec { role: RoleId::producer(s, 0), kind: FaultKind::BadProofs },
                    FaultSpec { role: RoleId::producer(s, 2), kind: FaultKind::BadProofs },
                ]
            })
            .collect();
        let out = run(&spec, Protocol::Synchro, 6).unwrap();
        let r = &out.report;
        assert_eq!(r.proof_retries, 4);
        assert_eq!(r.rejected_candidates, 0);
        assert!(r.final_height >= 12, "height {}", r.final_height);
        assert!(r.stall_windows.is_empty());
        // Only the honest producers ever earn trust.
        assert!(r.trust.contains_key("producer-0-1"));
        assert!(r.trust.contains_key("producer-1-1"));
        assert_eq!(r.trust.get("producer-0-0"), None);
        assert_eq!(r.trust.get("producer-0-2"), None);
    }

    #[test]
    fn censoring_coordinator_is_routed_around_by_rotation() {
        let workload = WorkloadSpec {
            accounts: 20,
            tx_rate_per_sec: 20.0,
            cstx_fraction: 0.5,
            ..Default::default()
        };
        let mut spec = spec_with(small_params(), workload, 15);
        spec.roles.coordinators = 2;
        spec.faults = vec![FaultSpec {
            role: RoleId::coordinator(1),
            kind: FaultKind::IgnoreUser("user2".into()),
        }];
        let (out, blocks) = run_with_blocks(&spec, Protocol::Synchro, 8).unwrap();
        let r = &out.report;
        // Censorship alone is not detectable, so both coordinators stay in
        // rotation and both earn trust.
        assert_eq!(r.rejected_candidates, 0);
        assert!(r.trust.contains_key("coordinator-0"));
        assert!(r.trust.contains_key("coordinator-1"));
        // The ignored user still gets through on the honest turns.
        let included = blocks
            .iter()
            .flat_map(|b| &b.chunks)
            .flat_map(|c| &c.transactions)
            .filter(|tx| tx.sender.0 == "user2")
            .count();
        assert!(included > 0, "user2 never made it into a block");
    }

    #[test]
    fn unknown_faults_and_roles_are_config_errors() {
        let workload = WorkloadSpec::default();
        let mut spec = spec_with(small_params(), workload, 5);
        spec.faults = vec![FaultSpec {
            role: RoleId::producer(0, 0),
            kind: FaultKind::BadProofs,
        }];
        // One producer per shard leaves no fallback.
        assert!(matches!(run(&spec, Protocol::Synchro, 1), Err(SimError::Config(_))));
        spec.faults = vec![FaultSpec {
            role: RoleId::global_validator(0),
            kind: FaultKind::SelfFork,
        }];
        spec.roles.global_validators = 1;
        assert!(matches!(run(&spec, Protocol::Synchro, 1), Err(SimError::Config(_))));
    }
}
