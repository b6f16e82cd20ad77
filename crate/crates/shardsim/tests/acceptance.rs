//! Release gates, one test per gate, each ending in a single printed PASS
//! line with the numbers that justify it. These run the checked-in
//! scenarios through the public library surface; a failure here means the
//! simulator no longer reproduces the behavior the project exists to show.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shardsim::attack::AttackPlan;
use shardsim::block::Chunk;
use shardsim::digest::DigestBytes;
use shardsim::ledger::{shard_of, AccountId, AssertPolarity, ContractKind, Yocto, YOCTO_PER_TOKEN};
use shardsim::metrics::render_series;
use shardsim::nightshade::ChainView;
use shardsim::params::{ProofPolicy, SimulationParams};
use shardsim::roles::RoleId;
use shardsim::scenario::{load_scenario, FaultKind, FaultSpec, RolesSpec, ScenarioSpec};
use shardsim::sim::{run, run_with_blocks, Protocol};
use shardsim::synchro::{
    check_atomicity, coordinator_build_block, producer_make_proof, producer_verify_chunk,
    proving_cost_us, verify_proof, BuildTweaks,
};
use shardsim::workload::{genesis_states, WorkloadGen, WorkloadSpec};
use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::time::Instant;

const NEAR: Yocto = YOCTO_PER_TOKEN;

fn scenario(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    load_scenario(&path, &[]).expect("scenario file loads")
}

fn net_spec(duration_secs: u64, rate: f64, cstx: f64) -> ScenarioSpec {
    ScenarioSpec {
        name: "acceptance".into(),
        seed: 1,
        duration_us: duration_secs * 1_000_000,
        params: SimulationParams {
            shard_count: 2,
            max_txs_per_chunk: 128,
            ..Default::default()
        },
        workload: WorkloadSpec {
            accounts: 20,
            initial_balance: 200 * NEAR,
            tx_rate_per_sec: rate,
            cstx_fraction: cstx,
            ..Default::default()
        },
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

fn pass(gate: &str, detail: String) {
    println!("PASS {gate}: {detail}");
}

#[test]
fn gate_1_interference_attack_stalls_the_baseline() {
    let wall = Instant::now();
    let spec = scenario("attack.toml");
    let rounds = spec.attack.as_ref().expect("attack plan").rounds as u64;
    assert_eq!(rounds, 20);

    let out = run(&spec, Protocol::Baseline, spec.seed).expect("baseline run");
    let r = &out.report;
    assert_eq!(r.rollbacks, 20, "one rollback per round");
    assert_eq!(r.challenges, 20);

    // Each round takes three slots: phase one, receipt revert, rollback.
    // The rollback at t = 3r seconds cancels the round's blocks entirely,
    // so net height progress per round is zero, within the one-block
    // challenge delay.
    for round in 1..=rounds {
        let t_us = round * 3_000_000;
        let sample = out
            .series
            .iter()
            .find(|s| s.t_us == t_us)
            .unwrap_or_else(|| panic!("no sample at rollback {round}"));
        assert_eq!(sample.height, 0, "tip after rollback {round}");
    }
    let high_water = out
        .series
        .iter()
        .filter(|s| s.t_us <= 60_000_000)
        .map(|s| s.height)
        .max()
        .unwrap();
    assert_eq!(high_water, 2, "never past phase one plus its receipt block");

    assert_eq!(r.stall_windows.len(), 1, "one continuous stall");
    let stall = &r.stall_windows[0];
    assert_eq!((stall.start_us, stall.end_us), (2_000_000, 63_000_000));

    let secs = wall.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s");
    pass(
        "gate 1 (attack reproduction)",
        format!(
            "{} rollbacks, zero net progress per round, {:.0}s stall, {secs:.2}s wall",
            r.rollbacks,
            (stall.end_us - stall.start_us) as f64 / 1e6
        ),
    );
}

#[test]
fn gate_2_atomic_blocks_are_immune_to_the_attack() {
    let wall = Instant::now();
    let spec = scenario("attack.toml");
    let (out, blocks) = run_with_blocks(&spec, Protocol::Synchro, spec.seed).expect("synchro run");
    let r = &out.report;

    assert_eq!(r.rollbacks, 0);
    assert_eq!(r.challenges, 0);
    assert_eq!(r.txs_rejected, 20, "every deposit refused up front");
    assert!(r.stall_windows.is_empty());

    for pair in out.series.windows(2) {
        assert!(pair[1].height > pair[0].height, "finalized height monotone");
    }
    let total_slots = spec.duration_us / spec.params.t_block_us;
    assert_eq!(r.final_height, total_slots - 1, "steady slot-per-block cadence");

    assert_eq!(blocks.len() as u64, r.blocks_finalized);
    for block in &blocks {
        check_atomicity(&block.chunks, spec.params.shard_count)
            .unwrap_or_else(|e| panic!("finalized block {} violates atomicity: {e}", block.height));
    }

    let secs = wall.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s");
    pass(
        "gate 2 (attack immunity)",
        format!(
            "0 rollbacks, height to {} monotone, {} finalized blocks all atomic, {secs:.2}s wall",
            r.final_height, r.blocks_finalized
        ),
    );
}

#[test]
fn gate_3_pipeline_arithmetic_is_exact() {
    // Producing a chunk and proving it fits inside one block interval.
    let stage = SimulationParams {
        t_block_us: 1_000_000,
        t_chunk_us: 500_000,
        t_zk_p_us: 410_000,
        ..Default::default()
    };
    assert_eq!(stage.producer_stage_us(), 910_000);
    assert!(stage.producer_stage_fits_block());

    // Serial verification of one proof per shard keeps pace with the
    // producer stage, with equality exactly at 100 shards: the bound is
    // 0.43 s on both sides, tolerance zero.
    let pace = SimulationParams {
        shard_count: 100,
        t_chunk_us: 20_000,
        t_zk_p_us: 410_000,
        t_zk_v_us: 4_300,
        ..Default::default()
    };
    assert_eq!(pace.gv_serial_verify_us(), 430_000);
    assert_eq!(pace.producer_stage_us(), 430_000);
    assert!(pace.validation_keeps_pace());
    // One more shard tips the serial verifier past the bound.
    let over = SimulationParams { shard_count: 101, ..pace.clone() };
    assert_eq!(over.gv_serial_verify_us(), 434_300);
    assert!(!over.validation_keeps_pace());

    // Per-transaction proving of a full 100-transaction chunk costs
    // exactly 41 seconds; per-chunk proving stays at 0.41 s.
    assert_eq!(proving_cost_us(ProofPolicy::PerTransaction, 410_000, 100), 41_000_000);
    assert_eq!(proving_cost_us(ProofPolicy::PerChunk, 410_000, 100), 410_000);

    pass(
        "gate 3 (formula arithmetic)",
        "stage 0.91s < 1s, serial bound exactly 0.43s at 100 shards, \
         per-transaction chunk proof exactly 41s"
            .into(),
    );
}

#[test]
fn gate_4_throughput_parity_at_one_hundred_shards() {
    let wall = Instant::now();
    let spec = scenario("parity_100.toml");
    assert!(spec.duration_us >= 300_000_000, "at least 300 virtual seconds");
    assert!(spec.params.producer_stage_fits_block());
    assert!(spec.params.validation_keeps_pace());

    let base = run(&spec, Protocol::Baseline, spec.seed).expect("baseline run");
    let syn = run(&spec, Protocol::Synchro, spec.seed).expect("synchro run");
    let b = base.report.measured_tps;
    let s = syn.report.measured_tps;
    assert!(b > 100.0, "baseline throughput {b:.1}");
    let rel = (s - b).abs() / b;
    assert!(rel <= 0.01, "synchro {s:.2} tps vs baseline {b:.2} tps, {rel:.4} apart");
    assert!(syn.report.stall_windows.is_empty());
    assert!(base.report.stall_windows.is_empty());

    let secs = wall.elapsed().as_secs_f64();
    assert!(secs < 30.0, "took {secs:.2}s");
    pass(
        "gate 4 (throughput parity)",
        format!(
            "synchro {s:.1} tps vs baseline {b:.1} tps over {}s ({:.2}% apart), {secs:.2}s wall",
            spec.duration_us / 1_000_000,
            rel * 100.0
        ),
    );
}

#[test]
fn gate_5_thousand_shard_model_hits_one_hundred_thousand_tps() {
    let wall = Instant::now();
    let spec = scenario("scale_1000.toml");
    let p = &spec.params;
    assert_eq!(p.shard_count, 1000);
    assert_eq!(p.max_txs_per_chunk, 100);
    assert_eq!(p.proof_policy, ProofPolicy::PerChunk);

    // With 0.4 ms verification per proof, serial validation of a thousand
    // proofs takes 0.4 s and the block interval stays the bottleneck.
    assert!(p.producer_stage_fits_block());
    assert!(p.validation_keeps_pace());
    assert_eq!(p.steady_interval_us(), 1_000_000);

    let modeled = p.modeled_tps();
    assert!(
        (modeled - 100_000.0).abs() <= 1_000.0,
        "modeled {modeled} outside 100000 +/- 1%"
    );
    assert_eq!(modeled, 100_000.0, "and in fact lands exactly");

    let secs = wall.elapsed().as_secs_f64();
    assert!(secs < 60.0, "took {secs:.2}s");
    pass(
        "gate 5 (scale model)",
        format!("1000 shards x 100 txs / 1.0s interval = {modeled:.0} tps, {secs:.2}s wall"),
    );
}

/// Companion to gate 5: actually run the thousand-shard scenario and check
/// the measured rate lands within two percent of the model.
#[test]
fn scale_1000_measured_throughput_tracks_the_model() {
    let spec = scenario("scale_1000.toml");
    let out = run(&spec, Protocol::Synchro, spec.seed).expect("scale run");
    let r = &out.report;
    assert!(r.stall_windows.is_empty());
    let ratio = r.measured_tps / r.modeled_tps;
    assert!(
        ratio >= 0.98,
        "measured {:.0} tps is {:.3} of the {:.0} tps model",
        r.measured_tps,
        ratio,
        r.modeled_tps
    );
    pass(
        "scale follow-through",
        format!(
            "measured {:.0} tps = {:.1}% of model over {}s",
            r.measured_tps,
            ratio * 100.0,
            spec.duration_us / 1_000_000
        ),
    );
}

#[test]
fn gate_6a_censored_user_lands_within_three_blocks() {
    let victim = "user2";
    let mut spec = net_spec(20, 20.0, 0.5);
    spec.roles.coordinators = 2;
    spec.faults = vec![FaultSpec {
        role: RoleId::coordinator(1),
        kind: FaultKind::IgnoreUser(victim.into()),
    }];
    let seed = 8;
    let (out, blocks) = run_with_blocks(&spec, Protocol::Synchro, seed).expect("run");
    let r = &out.report;

    // Censorship alone produces valid blocks, so nothing gets rejected and
    // the two coordinators keep alternating.
    assert_eq!(r.rejected_candidates, 0);
    assert_eq!(r.txs_rejected, 0);
    assert!(r.trust.contains_key("coordinator-0"));
    assert!(r.trust.contains_key("coordinator-1"));
    for (i, block) in blocks.iter().enumerate() {
        assert_eq!(block.height, i as u64 + 1, "block heights consecutive");
    }

    let mut included: BTreeMap<DigestBytes, u64> = BTreeMap::new();
    for block in &blocks {
        for chunk in &block.chunks {
            for tx in &chunk.transactions {
                if tx.sender.0 == victim {
                    included.insert(tx.id, block.height);
                }
            }
        }
    }

    // Replay the arrival stream: every transaction the victim submitted
    // early enough to finalize must appear within three blocks of its
    // first opportunity.
    let gen = WorkloadGen::new(seed, spec.workload.clone(), spec.params.shard_count);
    let total_slots = spec.duration_us / spec.params.t_block_us;
    let mut checked = 0u32;
    let mut deferred = 0u32;
    for window in 0..total_slots - 3 {
        for (_, tx) in gen.window_txs(window, window * 1_000_000, 1_000_000) {
            if tx.sender.0 != victim {
                continue;
            }
            let height = included
                .get(&tx.id)
                .copied()
                .unwrap_or_else(|| panic!("victim tx from window {window} never finalized"));
            assert!(
                height >= window + 1 && height <= window + 3,
                "window {window} landed at height {height}"
            );
            if height > window + 1 {
                deferred += 1;
            }
            checked += 1;
        }
    }
    assert!(checked >= 5, "only {checked} victim transactions observed");
    assert!(deferred >= 1, "the censoring coordinator never got a turn");
    pass(
        "gate 6a (coordinator censorship)",
        format!("{checked} victim txs finalized within 3 blocks, {deferred} via the other coordinator"),
    );
}

#[test]
fn gate_6b_one_honest_producer_per_shard_keeps_finalizing() {
    let mut spec = net_spec(20, 20.0, 0.3);
    spec.roles.producers_per_shard = 3;
    // All but one producer on every shard forge their proofs.
    spec.faults = (0..spec.params.shard_count)
        .flat_map(|s| {
            [
                FaultSpec { role: RoleId::producer(s, 0), kind: FaultKind::BadProofs },
                FaultSpec { role: RoleId::producer(s, 2), kind: FaultKind::BadProofs },
            ]
        })
        .collect();
    let out = run(&spec, Protocol::Synchro, 4).expect("run");
    let r = &out.report;

    // Height one ranks both forgers ahead of the honest producer on each
    // shard, so the validator walks two retries per shard, once ever.
    assert_eq!(r.proof_retries, 4);
    assert_eq!(r.rejected_candidates, 0);
    assert!(r.stall_windows.is_empty());

    let heights: Vec<u64> = out.series.iter().map(|s| s.height).collect();
    let expected: Vec<u64> = (1..=r.final_height).collect();
    assert_eq!(heights, expected, "every height finalized, none skipped");
    let total_slots = spec.duration_us / spec.params.t_block_us;
    assert_eq!(r.final_height, total_slots - 1);

    for shard in 0..spec.params.shard_count {
        assert!(r.trust.contains_key(&format!("producer-{shard}-1")));
        assert_eq!(r.trust.get(&format!("producer-{shard}-0")), None);
        assert_eq!(r.trust.get(&format!("producer-{shard}-2")), None);
    }
    pass(
        "gate 6b (producer faults)",
        format!(
            "4 of 6 producers forging, {} retries, every height to {} finalized",
            r.proof_retries, r.final_height
        ),
    );
}

#[test]
fn gate_6c_fork_choice_beats_the_withholding_validator_on_every_seed() {
    let runs = 50u64;
    let mut wins = 0u64;
    for seed in 0..runs {
        let mut spec = net_spec(10, 10.0, 0.3);
        spec.roles.global_validators = 4;
        spec.faults = vec![FaultSpec {
            role: RoleId::global_validator(3),
            kind: FaultKind::SelfFork,
        }];
        let out = run(&spec, Protocol::Synchro, seed).expect("run");
        let r = &out.report;
        assert_eq!(r.forks.len(), 2, "seed {seed}: honest chain plus private fork");
        let honest = &r.forks[0];
        let private = &r.forks[1];
        assert!(honest.canonical, "seed {seed}: honest chain canonical");
        assert!(!private.canonical, "seed {seed}");
        assert!(
            honest.weight > private.weight,
            "seed {seed}: {} vs {}",
            honest.weight,
            private.weight
        );
        assert_eq!(r.canonical_tip, honest.tip, "seed {seed}");
        wins += 1;
    }
    assert_eq!(wins, runs);
    pass(
        "gate 6c (signature-weight fork choice)",
        format!("honest chain canonical in {wins}/{runs} seeded runs"),
    );
}

#[test]
fn gate_7a_value_conserved_over_ten_thousand_transactions() {
    let mut spec = net_spec(25, 500.0, 0.4);
    spec.params.shard_count = 4;
    spec.params.max_txs_per_chunk = 256;
    spec.workload.accounts = 40;
    spec.workload.initial_balance = 500 * NEAR;
    let genesis_total: Yocto = spec.genesis_accounts().iter().map(|(_, b, _)| *b).sum();

    // The baseline engine audits balances + gas + escrow against genesis
    // after every slot and fails the run on any drift.
    let base = run(&spec, Protocol::Baseline, 12).expect("baseline conserves value every slot");
    assert!(base.report.txs_submitted >= 10_000);

    // The atomic-block run never holds value in escrow, so the final
    // states must sum back to genesis exactly.
    let syn = run(&spec, Protocol::Synchro, 12).expect("synchro run");
    assert!(syn.report.txs_submitted >= 10_000);
    assert!(syn.report.txs_applied >= 10_000);
    let balances: Yocto = syn.final_states.iter().map(|s| s.total_balance()).sum();
    let gas: Yocto = syn.final_states.iter().map(|s| s.gas_burned_total).sum();
    assert_eq!(balances + gas, genesis_total, "zero drift");
    pass(
        "gate 7a (conservation)",
        format!(
            "{} txs applied across 4 shards, balances {balances} + gas {gas} = genesis exactly",
            syn.report.txs_applied
        ),
    );
}

#[test]
fn gate_7b_rollback_restores_roots_on_one_hundred_random_prefixes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE57);
    let workload = WorkloadSpec {
        accounts: 16,
        initial_balance: 300 * NEAR,
        tx_rate_per_sec: 30.0,
        cstx_fraction: 0.4,
        ..Default::default()
    };
    let attacker = AccountId::from("sybil");
    let plan = AttackPlan {
        attacker: attacker.clone(),
        contract: "vaultco".into(),
        deposit: NEAR,
        gas: NEAR / 1000,
        rounds: 1,
        start_us: 0,
    };

    for case in 0..100u32 {
        let prefix: u64 = rng.gen_range(0..8);
        let seed: u64 = rng.gen();

        let mut spec = net_spec(1, 0.0, 0.0);
        spec.workload = workload.clone();
        spec.extra_accounts = vec![
            (attacker.clone(), 100 * NEAR, None),
            ("vaultco".into(), 10 * NEAR, Some(ContractKind::AttackContract { threshold: NEAR })),
        ];
        let states = genesis_states(2, &spec.genesis_accounts());
        let mut view = ChainView::new(2, AssertPolarity::Prose, 64, states);
        let gen = WorkloadGen::new(seed, workload.clone(), 2);
        let mut queues: Vec<VecDeque<_>> = vec![VecDeque::new(), VecDeque::new()];

        let mut roots_at: Vec<Vec<DigestBytes>> =
            vec![(0..2).map(|s| view.state(s).state_root()).collect()];
        let advance = |view: &mut ChainView, queues: &mut Vec<VecDeque<_>>, slot: u64| {
            for (_, tx) in gen.window_txs(slot - 1, (slot - 1) * 1_000_000, 1_000_000) {
                queues[shard_of(&tx.sender, 2) as usize].push_back(tx);
            }
            let mut chunks = Vec::new();
            for shard in 0..2u32 {
                let queue = &mut queues[shard as usize];
                let take = queue.len().min(64);
                let txs: Vec<_> = queue.drain(..take).collect();
                chunks.push(view.produce_chunk(shard, txs, RoleId::producer(shard, 0)).unwrap());
            }
            view.assemble_block(chunks).unwrap();
        };

        for slot in 1..=prefix {
            advance(&mut view, &mut queues, slot);
            roots_at.push((0..2).map(|s| view.state(s).state_root()).collect());
        }

        // The deposit lands in the next block and its receipt reverts one
        // block later, challenging the block at height prefix + 1.
        queues[shard_of(&attacker, 2) as usize].push_front(plan.deposit_tx(0));
        advance(&mut view, &mut queues, prefix + 1);
        advance(&mut view, &mut queues, prefix + 2);

        let challenge = view.detect_inconsistency().expect("reverted receipt challenged");
        assert_eq!(challenge.block_height, prefix + 1, "case {case}");
        let outcome = view.rollback(&challenge).unwrap();
        assert_eq!(outcome.new_tip, prefix, "case {case}");

        let now: Vec<DigestBytes> = (0..2).map(|s| view.state(s).state_root()).collect();
        assert_eq!(now, roots_at[prefix as usize], "case {case}: roots differ after rollback");
        view.verify_state_matches_tip().unwrap();
        view.verify_receipt_deferral().unwrap();
    }
    pass(
        "gate 7b (rollback exactness)",
        "state roots restored bit-exactly after 100 random-prefix rollbacks".into(),
    );
}

#[test]
fn gate_7c_equal_seeds_replay_byte_identically() {
    for seed in 0..20u64 {
        let spec = net_spec(8, 25.0, 0.4);
        for protocol in [Protocol::Baseline, Protocol::Synchro] {
            let a = run(&spec, protocol, seed).expect("first run");
            let b = run(&spec, protocol, seed).expect("second run");
            assert_eq!(
                a.report.to_json(),
                b.report.to_json(),
                "{protocol} report differs at seed {seed}"
            );
            assert_eq!(
                render_series(&a.series),
                render_series(&b.series),
                "{protocol} series differs at seed {seed}"
            );
        }
    }
    // Distinct seeds actually change the chain.
    let spec = net_spec(8, 25.0, 0.4);
    let x = run(&spec, Protocol::Synchro, 0).unwrap();
    let y = run(&spec, Protocol::Synchro, 1).unwrap();
    assert_ne!(x.report.canonical_tip, y.report.canonical_tip);
    pass(
        "gate 7c (deterministic replay)",
        "byte-identical reports and series for 20 seeds on both engines".into(),
    );
}

#[test]
fn gate_7d_single_bit_mutations_never_verify() {
    // Build one honest chunk with traffic on it and a valid proof.
    let workload = WorkloadSpec {
        accounts: 12,
        initial_balance: 200 * NEAR,
        tx_rate_per_sec: 40.0,
        cstx_fraction: 0.5,
        ..Default::default()
    };
    let gen = WorkloadGen::new(3, workload, 2);
    let states = genesis_states(2, &gen.genesis_accounts());
    let txs: Vec<_> = gen
        .window_txs(0, 0, 1_000_000)
        .into_iter()
        .map(|(_, tx)| tx)
        .collect();
    let outcome = coordinator_build_block(
        &RoleId::coordinator(0),
        DigestBytes::ZERO,
        1,
        &states,
        &txs,
        2,
        64,
        AssertPolarity::Prose,
        &BuildTweaks::default(),
    );
    let chunk = outcome.candidate.chunks[0].clone();
    assert!(!chunk.transactions.is_empty(), "chunk carries traffic");
    let verified =
        producer_verify_chunk(&chunk, &outcome.candidate, &states[0], 2, 64, AssertPolarity::Prose)
            .expect("honest chunk verifies");
    let proof = producer_make_proof(
        Some(&verified),
        &RoleId::producer(0, 0),
        ProofPolicy::PerChunk,
        410_000,
    )
    .unwrap();
    verify_proof(&proof, &chunk).expect("unmutated proof verifies");

    let bytes = chunk.canonical_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let total = 1_000u32;
    let mut rejected = 0u32;
    for i in 0..total {
        if i % 2 == 0 {
            // Flip one bit of the chunk as it travels to the validator.
            let mut mutated = bytes.clone();
            let bit = rng.gen_range(0..mutated.len() * 8);
            mutated[bit / 8] ^= 1 << (bit % 8);
            match Chunk::decode(&mutated) {
                Err(_) => rejected += 1,
                Ok(changed) => {
                    if verify_proof(&proof, &changed).is_err() {
                        rejected += 1;
                    }
                }
            }
        } else {
            // Flip one bit of the proof's binding fields.
            let mut mutated = proof.clone();
            let field = rng.gen_range(0..4);
            let bit = rng.gen_range(0..256usize);
            let target = match field {
                0 => &mut mutated.chunk_digest,
                1 => &mut mutated.pre_state_root,
                2 => &mut mutated.post_state_root,
                _ => &mut mutated.attestation,
            };
            target.0[bit / 8] ^= 1 << (bit % 8);
            if verify_proof(&mutated, &chunk).is_err() {
                rejected += 1;
            }
        }
    }
    assert_eq!(rejected, total, "every mutation rejected");
    pass(
        "gate 7d (proof soundness)",
        format!("{rejected}/{total} single-bit mutations rejected"),
    );
}
