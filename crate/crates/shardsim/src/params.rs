//! Protocol and timing parameters.
//!
//! All virtual time is integer microseconds so the pipeline arithmetic is
//! exact; the scenario layer converts from seconds at the boundary. Token
//! amounts parse from decimal strings into yocto units without going
//! through floating point.

use crate::ledger::{AssertPolarity, Yocto};
use serde::{Deserialize, Serialize};

/// How proving cost scales: a flat cost per chunk, or linear in the number
/// of transactions and receipts proven.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofPolicy {
    PerChunk,
    PerTransaction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub shard_count: u32,
    pub max_txs_per_chunk: usize,
    /// Target block interval.
    pub t_block_us: u64,
    /// Producer time to re-execute one chunk.
    pub t_chunk_us: u64,
    /// Proving time (per chunk, or per transaction under that policy).
    pub t_zk_p_us: u64,
    /// Global validator time to verify one proof.
    pub t_zk_v_us: u64,
    pub proof_policy: ProofPolicy,
    pub polarity: AssertPolarity,
    /// On rollback, refund the offender's gas instead of re-charging it.
    pub refund_gas: bool,
    /// Drop an offender's transactions after a successful challenge.
    pub blacklist_offender: bool,
    /// Keep only this many recent block bodies and snapshots (0 keeps all).
    pub retain_blocks: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            shard_count: 100,
            max_txs_per_chunk: 100,
            t_block_us: 1_000_000,
            t_chunk_us: 20_000,
            t_zk_p_us: 410_000,
            t_zk_v_us: 4_300,
            proof_policy: ProofPolicy::PerChunk,
            polarity: AssertPolarity::Prose,
            refund_gas: false,
            blacklist_offender: false,
            retain_blocks: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
}

impl SimulationParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (field, value) in [
            ("shard_count", self.shard_count as u64),
            ("max_txs_per_chunk", self.max_txs_per_chunk as u64),
            ("t_block", self.t_block_us),
        ] {
            if value == 0 {
                return Err(ParamError::NotPositive { field });
            }
        }
        Ok(())
    }

    /// Worst-case time a producer spends on one chunk: verification plus
    /// proving at full capacity.
    pub fn producer_stage_us(&self) -> u64 {
        let prove = match self.proof_policy {
            ProofPolicy::PerChunk => self.t_zk_p_us,
            ProofPolicy::PerTransaction => self.t_zk_p_us * self.max_txs_per_chunk as u64,
        };
        self.t_chunk_us + prove
    }

    /// Time a global validator spends verifying one block: one proof per
    /// shard, checked serially.
    pub fn gv_serial_verify_us(&self) -> u64 {
        self.shard_count as u64 * self.t_zk_v_us
    }

    /// The producer can verify and prove a chunk within one block interval.
    pub fn producer_stage_fits_block(&self) -> bool {
        self.producer_stage_us() <= self.t_block_us
    }

    /// Serial proof verification finishes before the next block's proofs
    /// arrive, so validation never becomes the bottleneck.
    pub fn validation_keeps_pace(&self) -> bool {
        self.gv_serial_verify_us() <= self.t_chunk_us + self.t_zk_p_us
    }

    /// Steady-state interval between finalized blocks: whichever pipeline
    /// stage is slowest.
    pub fn steady_interval_us(&self) -> u64 {
        self.t_block_us
            .max(self.producer_stage_us())
            .max(self.gv_serial_verify_us())
    }

    /// Throughput ceiling implied by the pipeline: full chunks on every
    /// shard at the steady interval.
    pub fn modeled_tps(&self) -> f64 {
        let per_block = self.shard_count as u64 * self.max_txs_per_chunk as u64;
        per_block as f64 * 1_000_000.0 / self.steady_interval_us() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("bad duration {0:?}: must be a non-negative number of seconds")]
    BadDuration(String),
    #[error("bad token amount {0:?}")]
    BadTokens(String),
    #[error("token amount {0:?} has more than 24 decimal places")]
    TooPrecise(String),
}

/// Convert a duration in seconds to integer microseconds, rounding to the
/// nearest microsecond.
pub fn secs_to_us(secs: f64) -> Result<u64, ParseError> {
    if !secs.is_finite() || secs < 0.0 || secs > 1e12 {
        return Err(ParseError::BadDuration(format!("{secs}")));
    }
    Ok((secs * 1_000_000.0).round() as u64)
}

pub fn us_to_secs(us: u64) -> f64 {
    us as f64 / 1_000_000.0
}

/// Yocto units in one token.
pub const TOKEN: Yocto = crate::ledger::YOCTO_PER_TOKEN;

/// Parse a decimal token amount ("6.99", "0.001", "12") into yocto units
/// exactly.
pub fn parse_tokens(text: &str) -> Result<Yocto, ParseError> {
    let bad = || ParseError::BadTokens(text.to_string());
    let mut parts = text.splitn(2, '.');
    let int_part = parts.next().ok_or_else(bad)?;
    let frac_part = parts.next().unwrap_or("");
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let whole: Yocto = if int_part.is_empty() {
        0
    } else {
        int_part.parse::<Yocto>().map_err(|_| bad())?
    };
    if frac_part.len() > 24 {
        return Err(ParseError::TooPrecise(text.to_string()));
    }
    let mut frac: Yocto = 0;
    for c in frac_part.chars() {
        let d = c.to_digit(10).ok_or_else(bad)? as Yocto;
        frac = frac * 10 + d;
    }
    let scale = 10u128.pow(24 - frac_part.len() as u32);
    whole
        .checked_mul(TOKEN)
        .and_then(|w| w.checked_add(frac * scale))
        .ok_or_else(bad)
}

/// Render a yocto amount as a decimal token string, trimming trailing
/// zeros.
pub fn format_tokens(amount: Yocto) -> String {
    let whole = amount / TOKEN;
    let frac = amount % TOKEN;
    if frac == 0 {
        return format!("{whole}");
    }
    let digits = format!("{frac:024}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}
