//! Background transaction load.
//!
//! Arrivals follow a Poisson process, generated as exponential inter-arrival
//! gaps at the configured mean rate. Each block-interval window draws from
//! its own PRNG stream, seeded from the master seed and the window index, so
//! the traffic in one window never depends on how any other window was
//! consumed and a run is reproducible from the seed alone.

use crate::digest::stream_seed;
use crate::ledger::{shard_of, AccountId, ContractKind, LedgerState, Transaction, TxKind, Yocto};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    /// Number of generated accounts (named `user0`, `user1`, ...).
    pub accounts: u32,
    pub initial_balance: Yocto,
    /// Mean arrivals per virtual second across the whole network.
    pub tx_rate_per_sec: f64,
    /// Fraction of transactions whose receiver lives on another shard.
    pub cstx_fraction: f64,
    pub amount_min: Yocto,
    pub amount_max: Yocto,
    pub gas: Yocto,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            accounts: 40,
            initial_balance: 50 * crate::ledger::YOCTO_PER_TOKEN,
            tx_rate_per_sec: 20.0,
            cstx_fraction: 0.3,
            amount_min: crate::ledger::YOCTO_PER_TOKEN / 10,
            amount_max: 2 * crate::ledger::YOCTO_PER_TOKEN,
            gas: crate::ledger::YOCTO_PER_TOKEN / 1000,
        }
    }
}

/// Deterministic account names spread evenly across shards: shard `s` gets
/// `count / shard_count` of them (plus one of the remainder), chosen by
/// walking `user0, user1, ...` and keeping a name only while its shard
/// still has room. Without the balancing, hashing scatters small account
/// sets unevenly and some shards see far less traffic than others.
pub fn user_accounts(count: u32, shard_count: u32) -> Vec<AccountId> {
    let shards = shard_count.max(1) as usize;
    let base = count as usize / shards;
    let extra = count as usize % shards;
    let mut room: Vec<usize> = (0..shards).map(|s| base + usize::from(s < extra)).collect();
    let mut out = Vec::with_capacity(count as usize);
    let mut i = 0u64;
    while out.len() < count as usize {
        let account = AccountId(format!("user{i}"));
        let shard = shard_of(&account, shard_count) as usize;
        if room[shard] > 0 {
            room[shard] -= 1;
            out.push(account);
        }
        i += 1;
    }
    out
}

/// Build per-shard genesis states from a list of accounts, each optionally
/// carrying a contract registration.
pub fn genesis_states(
    shard_count: u32,
    accounts: &[(AccountId, Yocto, Option<ContractKind>)],
) -> Vec<LedgerState> {
    let mut states: Vec<LedgerState> = (0..shard_count).map(LedgerState::new).collect();
    for (account, balance, contract) in accounts {
        let shard = shard_of(account, shard_count) as usize;
        states[shard].open_account(account.clone(), *balance);
        if let Some(kind) = contract {
            states[shard].register_contract(account, kind.clone());
        }
    }
    states
}

pub struct WorkloadGen {
    spec: WorkloadSpec,
    shard_count: u32,
    master_seed: u64,
    accounts: Vec<AccountId>,
    by_shard: Vec<Vec<u32>>,
}

const NONCE_WINDOW_SHIFT: u32 = 20;

impl WorkloadGen {
    pub fn new(master_seed: u64, spec: WorkloadSpec, shard_count: u32) -> Self {
        let accounts = user_accounts(spec.accounts, shard_count);
        let mut by_shard = vec![Vec::new(); shard_count as usize];
        for (i, a) in accounts.iter().enumerate() {
            by_shard[shard_of(a, shard_count) as usize].push(i as u32);
        }
        WorkloadGen { spec, shard_count, master_seed, accounts, by_shard }
    }

    pub fn accounts(&self) -> &[AccountId] {
        &self.accounts
    }

    /// All generated accounts with their genesis balance.
    pub fn genesis_accounts(&self) -> Vec<(AccountId, Yocto, Option<ContractKind>)> {
        self.accounts
            .iter()
            .map(|a| (a.clone(), self.spec.initial_balance, None))
            .collect()
    }

    /// Transactions arriving within `[window_start_us, window_start_us +
    /// window_len_us)`, in arrival order.
    pub fn window_txs(
        &self,
        window: u64,
        window_start_us: u64,
        window_len_us: u64,
    ) -> Vec<(u64, Transaction)> {
        let mut out = Vec::new();
        if self.spec.tx_rate_per_sec <= 0.0 || self.accounts.is_empty() {
            return out;
        }
        let mut rng = ChaCha8Rng::from_seed(stream_seed(self.master_seed, "workload", window));
        let rate_per_us = self.spec.tx_rate_per_sec / 1_000_000.0;
        let mut t = 0.0f64;
        loop {
            // (0, 1] keeps ln away from zero.
            let u: f64 = 1.0 - rng.gen::<f64>();
            t += -u.ln() / rate_per_us;
            if t >= window_len_us as f64 {
                return out;
            }
            let i = out.len() as u64;
            assert!(i < 1 << NONCE_WINDOW_SHIFT, "window overflows the nonce space");
            let nonce = (window << NONCE_WINDOW_SHIFT) | i;
            let tx = self.draw_tx(&mut rng, nonce);
            out.push((window_start_us + t as u64, tx));
        }
    }

    fn draw_tx(&self, rng: &mut ChaCha8Rng, nonce: u64) -> Transaction {
        let sender_idx = rng.gen_range(0..self.accounts.len());
        let sender = &self.accounts[sender_idx];
        let sender_shard = shard_of(sender, self.shard_count) as usize;

        let want_cross = self.shard_count > 1
            && self.by_shard[sender_shard].len() < self.accounts.len()
            && rng.gen::<f64>() < self.spec.cstx_fraction;

        let receiver = if want_cross {
            // Rejection-sample a receiver off the sender's shard.
            loop {
                let r = rng.gen_range(0..self.accounts.len());
                if shard_of(&self.accounts[r], self.shard_count) as usize != sender_shard {
                    break &self.accounts[r];
                }
            }
        } else {
            let peers = &self.by_shard[sender_shard];
            &self.accounts[peers[rng.gen_range(0..peers.len())] as usize]
        };

        let amount = if self.spec.amount_max > self.spec.amount_min {
            rng.gen_range(self.spec.amount_min..=self.spec.amount_max)
        } else {
            self.spec.amount_min
        };
        Transaction::new(
            sender.clone(),
            receiver.clone(),
            amount,
            self.spec.gas,
            TxKind::Transfer,
            nonce,
        )
    }
}
