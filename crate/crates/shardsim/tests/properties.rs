//! Randomized invariants over the public surface: canonical codec, stall
//! detection, pipeline arithmetic, candidate atomicity, and conservation
//! under arbitrary small workloads.

use proptest::option;
use proptest::prelude::*;
use shardsim::block::Chunk;
use shardsim::digest::DigestBytes;
use shardsim::ledger::{AccountId, AssertPolarity, Receipt, Transaction, TxKind, YOCTO_PER_TOKEN};
use shardsim::metrics::{compute_stalls, HeightSample};
use shardsim::params::{ProofPolicy, SimulationParams};
use shardsim::roles::RoleId;
use shardsim::scenario::{RolesSpec, ScenarioSpec};
use shardsim::sim::{run, Protocol};
use shardsim::synchro::{
    check_atomicity, coordinator_build_block, producer_make_proof, producer_verify_chunk,
    verify_proof, BuildTweaks,
};
use shardsim::workload::{genesis_states, user_accounts, WorkloadGen, WorkloadSpec};

fn arb_account() -> impl Strategy<Value = AccountId> {
    "[a-z]{1,8}[0-9]{0,3}".prop_map(AccountId)
}

fn arb_digest() -> impl Strategy<Value = DigestBytes> {
    any::<[u8; 32]>().prop_map(DigestBytes)
}

fn arb_tx_kind() -> impl Strategy<Value = TxKind> {
    prop_oneof![
        Just(TxKind::Transfer),
        "[a-z_]{1,12}".prop_map(|method| TxKind::ContractCall { method }),
    ]
}

fn arb_tx() -> impl Strategy<Value = Transaction> {
    (arb_account(), arb_account(), any::<u128>(), any::<u128>(), arb_tx_kind(), any::<u64>())
        .prop_map(|(s, r, amount, gas, kind, nonce)| Transaction::new(s, r, amount, gas, kind, nonce))
}

fn arb_receipt() -> impl Strategy<Value = Receipt> {
    (
        arb_digest(),
        0..64u32,
        arb_account(),
        any::<u128>(),
        option::of("[a-z]{1,10}"),
        "[a-zA-Z ]{0,16}",
    )
        .prop_map(|(origin, shard, receiver, amount, call, result)| {
            Receipt::new(origin, shard, receiver, amount, call, result)
        })
}

fn arb_role() -> impl Strategy<Value = RoleId> {
    prop_oneof![
        (0..8u32).prop_map(RoleId::coordinator),
        (0..8u32, 0..8u32).prop_map(|(s, i)| RoleId::producer(s, i)),
        (0..8u32).prop_map(RoleId::global_validator),
    ]
}

fn arb_chunk() -> impl Strategy<Value = Chunk> {
    (
        0..64u32,
        any::<u64>(),
        prop::collection::vec(arb_tx(), 0..6),
        prop::collection::vec(arb_receipt(), 0..6),
        arb_digest(),
        arb_digest(),
        arb_role(),
        option::of(arb_digest()),
    )
        .prop_map(|(shard, height, transactions, receipts, pre, post, producer, block_hash)| {
            let mut chunk = Chunk {
                shard,
                height,
                transactions,
                receipts,
                pre_state_root: pre,
                post_state_root: post,
                producer,
                signature: DigestBytes::ZERO,
                block_hash,
            };
            chunk.sign();
            chunk
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Encoding then decoding reproduces the chunk, and re-encoding
    /// reproduces the bytes.
    #[test]
    fn chunk_codec_round_trips(chunk in arb_chunk()) {
        let bytes = chunk.canonical_bytes();
        let back = Chunk::decode(&bytes).expect("own encoding decodes");
        prop_assert_eq!(&back, &chunk);
        prop_assert_eq!(back.canonical_bytes(), bytes);
    }

    /// The decoder accepts untrusted bytes: it never panics, and anything
    /// it does accept re-encodes to exactly the input, so no two byte
    /// strings decode to the same chunk.
    #[test]
    fn chunk_decoder_is_total_and_canonical(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        if let Ok(chunk) = Chunk::decode(&bytes) {
            prop_assert_eq!(chunk.canonical_bytes(), bytes);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Stall windows are exactly the over-threshold flat spans: ordered,
    /// disjoint, inside the run, each longer than the threshold, and
    /// containing no progress event.
    #[test]
    fn stall_windows_cover_only_flat_spans(
        gaps in prop::collection::vec((1..4_000_000u64, 0..=2u64), 0..30),
        tail in 0..6_000_000u64,
        threshold in 1_000_000..5_000_000u64,
    ) {
        let mut samples = Vec::new();
        let mut t = 0u64;
        let mut height = 0u64;
        for (gap, advance) in gaps {
            t += gap;
            height += advance;
            samples.push(HeightSample { t_us: t, height });
        }
        let duration = t + tail;
        let windows = compute_stalls(&samples, duration, threshold);

        let mut prev_end = 0u64;
        for w in &windows {
            prop_assert!(w.start_us >= prev_end);
            prop_assert!(w.end_us <= duration);
            prop_assert!(w.end_us - w.start_us > threshold);
            prev_end = w.end_us;
        }
        // High-water progress never happens strictly inside a window.
        let mut high = 0u64;
        for s in &samples {
            if s.height > high {
                high = s.height;
                for w in &windows {
                    prop_assert!(
                        s.t_us <= w.start_us || s.t_us >= w.end_us,
                        "progress at {} inside stall {}..{}", s.t_us, w.start_us, w.end_us
                    );
                }
            }
        }
    }

    /// The pipeline numbers stay consistent with their definitions for any
    /// parameter mix.
    #[test]
    fn pipeline_numbers_agree_with_their_definitions(
        shards in 1..2000u32,
        cap in 1..500usize,
        t_block in 1_000..5_000_000u64,
        t_chunk in 1..1_000_000u64,
        t_zk_p in 1..2_000_000u64,
        t_zk_v in 1..50_000u64,
        per_tx in any::<bool>(),
    ) {
        let p = SimulationParams {
            shard_count: shards,
            max_txs_per_chunk: cap,
            t_block_us: t_block,
            t_chunk_us: t_chunk,
            t_zk_p_us: t_zk_p,
            t_zk_v_us: t_zk_v,
            proof_policy: if per_tx { ProofPolicy::PerTransaction } else { ProofPolicy::PerChunk },
            ..Default::default()
        };
        let prove = if per_tx { t_zk_p * cap as u64 } else { t_zk_p };
        prop_assert_eq!(p.producer_stage_us(), t_chunk + prove);
        prop_assert_eq!(p.gv_serial_verify_us(), shards as u64 * t_zk_v);
        let steady = t_block.max(p.producer_stage_us()).max(p.gv_serial_verify_us());
        prop_assert_eq!(p.steady_interval_us(), steady);
        prop_assert_eq!(p.producer_stage_fits_block(), p.producer_stage_us() <= t_block);
        // Pace is measured against a single chunk's verify-plus-prove time,
        // independent of the proof pricing policy.
        prop_assert_eq!(p.validation_keeps_pace(), p.gv_serial_verify_us() <= t_chunk + t_zk_p);
        let tps = shards as f64 * cap as f64 * 1_000_000.0 / steady as f64;
        prop_assert!((p.modeled_tps() - tps).abs() < 1e-9 * tps.max(1.0));
    }

    /// Generated user accounts land on shards in exact quota: every shard
    /// gets the floor share, the remainder goes to the lowest shards.
    #[test]
    fn generated_accounts_fill_shard_quotas(count in 0..400u32, shards in 1..32u32) {
        let accounts = user_accounts(count, shards);
        prop_assert_eq!(accounts.len(), count as usize);
        let mut per_shard = vec![0u32; shards as usize];
        for a in &accounts {
            per_shard[shardsim::ledger::shard_of(a, shards) as usize] += 1;
        }
        let base = count / shards;
        let extra = count % shards;
        for (s, n) in per_shard.iter().enumerate() {
            let quota = base + u32::from((s as u32) < extra);
            prop_assert_eq!(*n, quota, "shard {}", s);
        }
        let mut names: Vec<_> = accounts.iter().map(|a| a.0.clone()).collect();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), count as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever the traffic, a coordinator's candidate block pairs every
    /// cross-shard debit with its receipt, chunk by chunk, and honest
    /// producers can verify and prove each chunk.
    #[test]
    fn candidates_are_always_atomic_and_provable(
        seed in any::<u64>(),
        shards in 1..4u32,
        rate in 5.0..60.0f64,
        cstx in 0.0..1.0f64,
        cap in 4..64usize,
    ) {
        let workload = WorkloadSpec {
            accounts: 16,
            initial_balance: 500 * YOCTO_PER_TOKEN,
            tx_rate_per_sec: rate,
            cstx_fraction: cstx,
            ..Default::default()
        };
        let gen = WorkloadGen::new(seed, workload, shards);
        let states = genesis_states(shards, &gen.genesis_accounts());
        let txs: Vec<Transaction> =
            gen.window_txs(0, 0, 1_000_000).into_iter().map(|(_, tx)| tx).collect();

        let outcome = coordinator_build_block(
            &RoleId::coordinator(0),
            DigestBytes::ZERO,
            1,
            &states,
            &txs,
            shards,
            cap,
            AssertPolarity::Prose,
            &BuildTweaks::default(),
        );
        prop_assert!(check_atomicity(&outcome.candidate.chunks, shards).is_ok());
        for shard in 0..shards as usize {
            let chunk = &outcome.candidate.chunks[shard];
            let v = producer_verify_chunk(
                chunk,
                &outcome.candidate,
                &states[shard],
                shards,
                cap,
                AssertPolarity::Prose,
            );
            prop_assert!(v.is_ok(), "shard {} failed: {:?}", shard, v.err());
            let proof = producer_make_proof(
                v.as_ref().ok(),
                &RoleId::producer(shard as u32, 0),
                ProofPolicy::PerChunk,
                410_000,
            )
            .unwrap();
            prop_assert!(verify_proof(&proof, chunk).is_ok());
        }
    }

    /// Any small scenario conserves value on both engines and replays
    /// identically from the same seed.
    #[test]
    fn random_scenarios_conserve_value_and_replay(
        seed in any::<u64>(),
        shards in 1..3u32,
        rate in 0.0..40.0f64,
        cstx in 0.0..1.0f64,
        accounts in 4..24u32,
        duration in 3..8u64,
    ) {
        let spec = ScenarioSpec {
            name: "property".into(),
            seed: 1,
            duration_us: duration * 1_000_000,
            params: SimulationParams {
                shard_count: shards,
                max_txs_per_chunk: 64,
                ..Default::default()
            },
            workload: WorkloadSpec {
                accounts,
                initial_balance: 300 * YOCTO_PER_TOKEN,
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
        };
        let genesis_total: u128 = spec.genesis_accounts().iter().map(|(_, b, _)| *b).sum();

        for protocol in [Protocol::Baseline, Protocol::Synchro] {
            let a = run(&spec, protocol, seed).expect("run succeeds");
            let b = run(&spec, protocol, seed).expect("replay succeeds");
            prop_assert_eq!(a.report.to_json(), b.report.to_json());
            if protocol == Protocol::Synchro {
                let balances: u128 = a.final_states.iter().map(|s| s.total_balance()).sum();
                let gas: u128 = a.final_states.iter().map(|s| s.gas_burned_total).sum();
                prop_assert_eq!(balances + gas, genesis_total);
            }
        }
    }
}
