//! Scenario files: what to simulate, with which parameters, under which
//! faults.
//!
//! A scenario is a TOML document. Every field has a default except `name`
//! and `duration_secs`, so small scenarios stay small. Values given on the
//! command line as `--set path.to.field=value` are spliced into the parsed
//! document before validation, so overrides go through exactly the same
//! checking as the file itself.

use crate::attack::AttackPlan;
use crate::ledger::{shard_of, AccountId, AssertPolarity, ContractKind, Yocto};
use crate::params::{parse_tokens, secs_to_us, ProofPolicy, SimulationParams};
use crate::roles::RoleId;
use crate::workload::WorkloadSpec;
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: String },
    #[error("{origin}: {err}")]
    Parse { origin: String, err: String },
    #[error("{field}: {why}")]
    Invalid { field: String, why: String },
    #[error("bad override {given:?}: {why}")]
    BadOverride { given: String, why: String },
}

fn invalid(field: &str, why: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.to_string(), why: why.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolesSpec {
    pub coordinators: u32,
    pub producers_per_shard: u32,
    pub global_validators: u32,
    pub reward_per_block: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaultKind {
    /// Coordinator silently drops this user's transactions.
    IgnoreUser(AccountId),
    /// Coordinator emits candidates whose cross-shard transactions have no
    /// receipts.
    CstxOnlyBlocks,
    /// Producer signs proofs without verifying anything.
    BadProofs,
    /// Global validator withholds signatures from honest blocks and signs
    /// a private fork instead.
    SelfFork,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultSpec {
    pub role: RoleId,
    pub kind: FaultKind,
}

/// A parsed and validated scenario.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub duration_us: u64,
    pub params: SimulationParams,
    pub workload: WorkloadSpec,
    /// Accounts beyond the generated users: attacker, contracts, targets.
    pub extra_accounts: Vec<(AccountId, Yocto, Option<ContractKind>)>,
    pub attack: Option<AttackPlan>,
    pub roles: RolesSpec,
    pub faults: Vec<FaultSpec>,
}

impl ScenarioSpec {
    /// Every genesis account: generated users plus the named extras.
    pub fn genesis_accounts(&self) -> Vec<(AccountId, Yocto, Option<ContractKind>)> {
        let mut all: Vec<(AccountId, Yocto, Option<ContractKind>)> =
            crate::workload::user_accounts(self.workload.accounts, self.params.shard_count)
                .into_iter()
                .map(|a| (a, self.workload.initial_balance, None))
                .collect();
        all.extend(self.extra_accounts.iter().cloned());
        all
    }

    fn account_exists(&self, account: &AccountId) -> bool {
        if self.extra_accounts.iter().any(|(a, _, _)| a == account) {
            return true;
        }
        crate::workload::user_accounts(self.workload.accounts, self.params.shard_count)
            .contains(account)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    duration_secs: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    params: ParamsFile,
    #[serde(default)]
    workload: WorkloadFile,
    #[serde(default)]
    accounts: Vec<AccountFile>,
    attack: Option<AttackFile>,
    #[serde(default)]
    roles: RolesFile,
    #[serde(default)]
    faults: Vec<FaultFile>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    shard_count: Option<u32>,
    max_txs_per_chunk: Option<usize>,
    t_block_secs: Option<f64>,
    t_chunk_secs: Option<f64>,
    t_zk_p_secs: Option<f64>,
    t_zk_v_secs: Option<f64>,
    proof_policy: Option<ProofPolicy>,
    polarity: Option<AssertPolarity>,
    refund_gas: Option<bool>,
    blacklist_offender: Option<bool>,
    retain_blocks: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadFile {
    accounts: Option<u32>,
    initial_balance_tokens: Option<String>,
    tx_rate_per_sec: Option<f64>,
    cstx_fraction: Option<f64>,
    amount_tokens_min: Option<String>,
    amount_tokens_max: Option<String>,
    gas_tokens: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountFile {
    name: String,
    balance_tokens: String,
    contract: Option<ContractFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractFile {
    kind: String,
    threshold_tokens: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackFile {
    attacker: String,
    contract: String,
    deposit_tokens: String,
    gas_tokens: Option<String>,
    rounds: u32,
    #[serde(default)]
    start_secs: f64,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolesFile {
    coordinators: Option<u32>,
    producers_per_shard: Option<u32>,
    global_validators: Option<u32>,
    reward_per_block: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultFile {
    role: String,
    kind: String,
    user: Option<String>,
}

/// Load a scenario file, apply `--set` overrides, validate.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    parse_scenario(&text, &path.display().to_string(), overrides)
}

/// Parse scenario TOML from a string (the `origin` names it in errors).
pub fn parse_scenario(
    text: &str,
    origin: &str,
    overrides: &[String],
) -> Result<ScenarioSpec, ScenarioError> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        err: e.to_string(),
    })?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let file: ScenarioFile = value.try_into().map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        err: e.to_string(),
    })?;
    validate(file)
}

/// Splice one `path.to.field=value` override into a parsed document.
/// Intermediate tables are created as needed; the value parses as TOML
/// first and falls back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ScenarioError> {
    let bad = |why: &str| ScenarioError::BadOverride { given: spec.to_string(), why: why.into() };
    let (path, raw) = spec.split_once('=').ok_or_else(|| bad("expected path=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(bad("empty path"));
    }
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty path segment"));
    }

    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };

    let mut cursor = root;
    for seg in &segments[..segments.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| bad("path crosses a non-table"))?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| bad("path crosses a non-table"))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}

fn tokens_field(
    field: &str,
    text: Option<&String>,
    default: Yocto,
) -> Result<Yocto, ScenarioError> {
    match text {
        None => Ok(default),
        Some(t) => parse_tokens(t).map_err(|e| invalid(field, e.to_string())),
    }
}

fn secs_field(field: &str, secs: Option<f64>, default_us: u64) -> Result<u64, ScenarioError> {
    match secs {
        None => Ok(default_us),
        Some(s) => secs_to_us(s).map_err(|e| invalid(field, e.to_string())),
    }
}

fn validate(file: ScenarioFile) -> Result<ScenarioSpec, ScenarioError> {
    let dp = SimulationParams::default();
    let params = SimulationParams {
        shard_count: file.params.shard_count.unwrap_or(dp.shard_count),
        max_txs_per_chunk: file.params.max_txs_per_chunk.unwrap_or(dp.max_txs_per_chunk),
        t_block_us: secs_field("params.t_block_secs", file.params.t_block_secs, dp.t_block_us)?,
        t_chunk_us: secs_field("params.t_chunk_secs", file.params.t_chunk_secs, dp.t_chunk_us)?,
        t_zk_p_us: secs_field("params.t_zk_p_secs", file.params.t_zk_p_secs, dp.t_zk_p_us)?,
        t_zk_v_us: secs_field("params.t_zk_v_secs", file.params.t_zk_v_secs, dp.t_zk_v_us)?,
        proof_policy: file.params.proof_policy.unwrap_or(dp.proof_policy),
        polarity: file.params.polarity.unwrap_or(dp.polarity),
        refund_gas: file.params.refund_gas.unwrap_or(dp.refund_gas),
        blacklist_offender: file.params.blacklist_offender.unwrap_or(dp.blacklist_offender),
        retain_blocks: file.params.retain_blocks.unwrap_or(dp.retain_blocks),
    };
    params.validate().map_err(|e| invalid("params", e.to_string()))?;

    let duration_us = secs_to_us(file.duration_secs)
        .map_err(|e| invalid("duration_secs", e.to_string()))?;
    if duration_us == 0 {
        return Err(invalid("duration_secs", "must be positive"));
    }

    let dw = WorkloadSpec::default();
    let workload = WorkloadSpec {
        accounts: file.workload.accounts.unwrap_or(dw.accounts),
        initial_balance: tokens_field(
            "workload.initial_balance_tokens",
            file.workload.initial_balance_tokens.as_ref(),
            dw.initial_balance,
        )?,
        tx_rate_per_sec: file.workload.tx_rate_per_sec.unwrap_or(dw.tx_rate_per_sec),
        cstx_fraction: file.workload.cstx_fraction.unwrap_or(dw.cstx_fraction),
        amount_min: tokens_field(
            "workload.amount_tokens_min",
            file.workload.amount_tokens_min.as_ref(),
            dw.amount_min,
        )?,
        amount_max: tokens_field(
            "workload.amount_tokens_max",
            file.workload.amount_tokens_max.as_ref(),
            dw.amount_max,
        )?,
        gas: tokens_field("workload.gas_tokens", file.workload.gas_tokens.as_ref(), dw.gas)?,
    };
    if !workload.tx_rate_per_sec.is_finite() || workload.tx_rate_per_sec < 0.0 {
        return Err(invalid("workload.tx_rate_per_sec", "must be a non-negative number"));
    }
    if !(0.0..=1.0).contains(&workload.cstx_fraction) {
        return Err(invalid("workload.cstx_fraction", "must be within [0, 1]"));
    }
    if workload.amount_min > workload.amount_max {
        return Err(invalid("workload.amount_tokens_min", "exceeds amount_tokens_max"));
    }

    let mut extra_accounts = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for acct in &file.accounts {
        if acct.name.is_empty() {
            return Err(invalid("accounts.name", "must not be empty"));
        }
        if !seen.insert(acct.name.clone()) {
            return Err(invalid("accounts", format!("duplicate account {:?}", acct.name)));
        }
        let balance = parse_tokens(&acct.balance_tokens)
            .map_err(|e| invalid(&format!("accounts.{}.balance_tokens", acct.name), e.to_string()))?;
        let contract = match &acct.contract {
            None => None,
            Some(c) => Some(match c.kind.as_str() {
                "attack" => {
                    let t = c.threshold_tokens.as_ref().ok_or_else(|| {
                        invalid(
                            &format!("accounts.{}.contract", acct.name),
                            "attack contract needs threshold_tokens",
                        )
                    })?;
                    let threshold = parse_tokens(t).map_err(|e| {
                        invalid(
                            &format!("accounts.{}.contract.threshold_tokens", acct.name),
                            e.to_string(),
                        )
                    })?;
                    ContractKind::AttackContract { threshold }
                }
                "vault" => ContractKind::SimpleVault,
                other => {
                    return Err(invalid(
                        &format!("accounts.{}.contract.kind", acct.name),
                        format!("unknown kind {other:?} (expected \"attack\" or \"vault\")"),
                    ))
                }
            }),
        };
        extra_accounts.push((AccountId(acct.name.clone()), balance, contract));
    }

    let dr = RolesSpec {
        coordinators: 1,
        producers_per_shard: 1,
        global_validators: 3,
        reward_per_block: 1,
    };
    let roles = RolesSpec {
        coordinators: file.roles.coordinators.unwrap_or(dr.coordinators),
        producers_per_shard: file.roles.producers_per_shard.unwrap_or(dr.producers_per_shard),
        global_validators: file.roles.global_validators.unwrap_or(dr.global_validators),
        reward_per_block: file.roles.reward_per_block.unwrap_or(dr.reward_per_block),
    };
    for (field, v) in [
        ("roles.coordinators", roles.coordinators),
        ("roles.producers_per_shard", roles.producers_per_shard),
        ("roles.global_validators", roles.global_validators),
    ] {
        if v == 0 {
            return Err(invalid(field, "must be at least 1"));
        }
    }

    let mut spec = ScenarioSpec {
        name: file.name,
        seed: file.seed,
        duration_us,
        params,
        workload,
        extra_accounts,
        attack: None,
        roles,
        faults: Vec::new(),
    };
    if spec.name.is_empty() {
        return Err(invalid("name", "must not be empty"));
    }

    if let Some(a) = &file.attack {
        let attacker = AccountId(a.attacker.clone());
        let contract = AccountId(a.contract.clone());
        if !spec.account_exists(&attacker) {
            return Err(invalid("attack.attacker", format!("unknown account {:?}", a.attacker)));
        }
        let registered = spec.extra_accounts.iter().any(|(acct, _, kind)| {
            acct == &contract && matches!(kind, Some(ContractKind::AttackContract { .. }))
        });
        if !registered {
            return Err(invalid(
                "attack.contract",
                format!("{:?} is not an account with an attack contract", a.contract),
            ));
        }
        let s = spec.params.shard_count;
        if shard_of(&attacker, s) == shard_of(&contract, s) {
            return Err(invalid(
                "attack",
                format!(
                    "attacker and contract share shard {} at shard_count {s}; the attack needs a \
                     cross-shard deposit",
                    shard_of(&attacker, s)
                ),
            ));
        }
        spec.attack = Some(AttackPlan {
            attacker,
            contract,
            deposit: parse_tokens(&a.deposit_tokens)
                .map_err(|e| invalid("attack.deposit_tokens", e.to_string()))?,
            gas: tokens_field(
                "attack.gas_tokens",
                a.gas_tokens.as_ref(),
                crate::ledger::YOCTO_PER_TOKEN / 1000,
            )?,
            rounds: a.rounds,
            start_us: secs_to_us(a.start_secs)
                .map_err(|e| invalid("attack.start_secs", e.to_string()))?,
        });
    }

    for (i, f) in file.faults.iter().enumerate() {
        let field = format!("faults[{i}]");
        let role = RoleId::from_key(&f.role)
            .ok_or_else(|| invalid(&format!("{field}.role"), format!("unknown role {:?}", f.role)))?;
        let in_range = match &role {
            RoleId::Coordinator { index } => *index < spec.roles.coordinators,
            RoleId::Producer { shard, index } => {
                *shard < spec.params.shard_count && *index < spec.roles.producers_per_shard
            }
            RoleId::GlobalValidator { index } => *index < spec.roles.global_validators,
        };
        if !in_range {
            return Err(invalid(
                &format!("{field}.role"),
                format!("{} does not exist in this scenario", f.role),
            ));
        }
        let kind = match f.kind.as_str() {
            "ignore_user" => {
                let user = f.user.as_ref().ok_or_else(|| {
                    invalid(&format!("{field}.user"), "ignore_user needs a user account")
                })?;
                let user = AccountId(user.clone());
                if !spec.account_exists(&user) {
                    return Err(invalid(
                        &format!("{field}.user"),
                        format!("unknown account {:?}", user.as_str()),
                    ));
                }
                if !matches!(role, RoleId::Coordinator { .. }) {
                    return Err(invalid(&format!("{field}.kind"),
                        "ignore_user applies to coordinators"));
                }
                FaultKind::IgnoreUser(user)
            }
            "cstx_only_blocks" => {
                if !matches!(role, RoleId::Coordinator { .. }) {
                    return Err(invalid(&format!("{field}.kind"),
                        "cstx_only_blocks applies to coordinators"));
                }
                FaultKind::CstxOnlyBlocks
            }
            "bad_proofs" => {
                if !matches!(role, RoleId::Producer { .. }) {
                    return Err(invalid(&format!("{field}.kind"),
                        "bad_proofs applies to producers"));
                }
                FaultKind::BadProofs
            }
            "self_fork" => {
                if !matches!(role, RoleId::GlobalValidator { .. }) {
                    return Err(invalid(&format!("{field}.kind"),
                        "self_fork applies to global validators"));
                }
                FaultKind::SelfFork
            }
            other => {
                return Err(invalid(&format!("{field}.kind"), format!("unknown kind {other:?}")))
            }
        };
        spec.faults.push(FaultSpec { role, kind });
    }

    Ok(spec)
}
