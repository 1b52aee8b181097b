//! Simulated blockchained FL: per-round miner assignment, update
//! verification, cross-miner sharing, an exponential-timer proof-of-work
//! race, and data-proportional rewards. The winner aggregates every
//! accepted update, so honest rounds reproduce plain federated averaging
//! bit for bit.

use crate::error::Result;
use crate::fedavg::{aggregate, local_train};
use crate::metrics::MetricsRow;
use crate::model::{evaluate, ParamVector};
use crate::netsim::{Direction, Message, NodeId};
use crate::rng::{self, SeedSpace};
use crate::runner::RunContext;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone)]
pub struct DeviceUpdate {
    pub device: usize,
    pub params: ParamVector,
    /// Actual local sample count.
    pub n: usize,
    /// Sample count the device claims; rewards depend on it.
    pub declared_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    NonFinite,
    DataClaim,
    NormBound,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NonFinite => write!(f, "non-finite"),
            RejectReason::DataClaim => write!(f, "data claim"),
            RejectReason::NormBound => write!(f, "norm bound"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accept,
    Reject(RejectReason),
}

/// Screen one update: finite parameters, a truthful data claim, and a
/// parameter norm inside the anomaly bound.
pub fn verify(update: &DeviceUpdate, norm_bound: f64) -> VerifyOutcome {
    if !update.params.is_finite() {
        return VerifyOutcome::Reject(RejectReason::NonFinite);
    }
    if update.declared_n != update.n {
        return VerifyOutcome::Reject(RejectReason::DataClaim);
    }
    if update.params.l2_norm() > norm_bound {
        return VerifyOutcome::Reject(RejectReason::NormBound);
    }
    VerifyOutcome::Accept
}

/// Anomaly bound for the round: `factor ×` the median norm of the finite
/// submissions.
pub fn round_norm_bound(updates: &[DeviceUpdate], factor: f64) -> f64 {
    let mut norms: Vec<f64> = updates
        .iter()
        .filter(|u| u.params.is_finite())
        .map(|u| u.params.l2_norm())
        .collect();
    if norms.is_empty() {
        return f64::INFINITY;
    }
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = norms[(norms.len() - 1) / 2];
    factor * median.max(1e-12)
}

/// Exponential PoW solve times for each miner, from streams keyed by
/// (round, miner).
pub fn pow_draw_times(num_miners: usize, lambda: f64, seeds: &SeedSpace, round: u64) -> Vec<f64> {
    (0..num_miners)
        .map(|m| {
            let mut stream = seeds.stream("pow", &[round, m as u64]);
            rng::exponential(&mut stream, lambda)
        })
        .collect()
}

/// Winner is the argmin solve time; exact ties go to the lowest miner id.
pub fn pow_race(times: &[f64]) -> (usize, f64) {
    let mut winner = 0;
    for (m, t) in times.iter().enumerate().skip(1) {
        if *t < times[winner] {
            winner = m;
        }
    }
    (winner, times[winner])
}

/// Reward `r_d = total · n_d / sum(accepted n_d)` for accepted devices.
pub fn compute_rewards(accepted: &[(usize, usize)], num_devices: usize, total: f64) -> Vec<f64> {
    let mut rewards = vec![0.0; num_devices];
    let pool: usize = accepted.iter().map(|(_, n)| n).sum();
    if pool == 0 {
        return rewards;
    }
    for (device, n) in accepted {
        rewards[*device] = total * *n as f64 / pool as f64;
    }
    rewards
}

/// One block appended to the log (blocks.jsonl).
#[derive(Debug, Clone, Serialize)]
pub struct BlockRecord {
    pub round: u64,
    pub winner: usize,
    pub pow_time: f64,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockflParams {
    pub num_miners: usize,
    pub tau: u64,
    pub rounds: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Rate of the exponential PoW timers.
    pub pow_rate: f64,
    pub reward_total: f64,
    /// Verification bound factor over the round's median norm.
    pub norm_bound_factor: f64,
}

impl Default for BlockflParams {
    fn default() -> Self {
        Self {
            num_miners: 2,
            tau: 5,
            rounds: 30,
            lr: 0.1,
            batch_size: 16,
            pow_rate: 1.0,
            reward_total: 1.0,
            norm_bound_factor: 10.0,
        }
    }
}

/// Verification, cross-sharing, the PoW race and aggregation for one
/// round's updates. Returns the block's global model (the previous one if
/// every update was rejected), the block record, and per-device accept
/// flags.
#[allow(clippy::too_many_arguments)]
pub fn execute_round(
    ctx: &mut RunContext,
    updates: Vec<DeviceUpdate>,
    prev_global: &ParamVector,
    params: &BlockflParams,
    round: u64,
) -> Result<(ParamVector, BlockRecord, Vec<bool>)> {
    let n = updates.len();
    let m = params.num_miners.max(1);
    let p = ctx.spec.param_count();

    // every device is assigned to exactly one miner for the round
    let mut assign_stream = ctx.seeds.stream("miner-assign", &[round]);
    let assignment: Vec<usize> = (0..n)
        .map(|_| rng::sample_with_replacement(&mut assign_stream, m, 1)[0])
        .collect();
    for (u, &miner) in updates.iter().zip(&assignment) {
        ctx.ledger.charge(
            &ctx.link,
            &ctx.wire,
            &Message::DenseParams { params: p },
            Direction::Uplink,
            NodeId::Device(u.device),
            NodeId::Miner(miner),
        );
    }

    let bound = round_norm_bound(&updates, params.norm_bound_factor);
    let accepted_flags: Vec<bool> = updates
        .iter()
        .map(|u| verify(u, bound) == VerifyOutcome::Accept)
        .collect();

    // miners cross-share their accepted updates (miner-to-miner links run
    // at downlink rates)
    for miner in 0..m {
        for (i, _) in updates.iter().enumerate() {
            if accepted_flags[i] && assignment[i] == miner {
                for other in 0..m {
                    if other != miner {
                        ctx.ledger.charge(
                            &ctx.link,
                            &ctx.wire,
                            &Message::DenseParams { params: p },
                            Direction::Downlink,
                            NodeId::Miner(miner),
                            NodeId::Miner(other),
                        );
                    }
                }
            }
        }
    }

    let times = pow_draw_times(m, params.pow_rate, &ctx.seeds, round);
    let (winner, pow_time) = pow_race(&times);

    // winner aggregates all accepted updates in device order
    let mut weighted = Vec::new();
    let mut accepted_sizes = Vec::new();
    for (i, u) in updates.iter().enumerate() {
        if accepted_flags[i] {
            weighted.push((u.params.clone(), u.n as f64));
            accepted_sizes.push((u.device, u.declared_n));
        }
    }
    let global = if weighted.is_empty() {
        prev_global.clone()
    } else {
        aggregate(&weighted)?
    };

    for u in &updates {
        ctx.ledger.charge(
            &ctx.link,
            &ctx.wire,
            &Message::Block { params: p },
            Direction::Downlink,
            NodeId::Miner(winner),
            NodeId::Device(u.device),
        );
    }

    let rewards = compute_rewards(&accepted_sizes, n, params.reward_total);
    Ok((
        global,
        BlockRecord {
            round,
            winner,
            pow_time,
            rewards,
        },
        accepted_flags,
    ))
}

/// BlockFL rounds with honest devices.
pub fn run_blockfl(
    ctx: &mut RunContext,
    params: &BlockflParams,
) -> Result<(Vec<MetricsRow>, Vec<BlockRecord>)> {
    let n = ctx.devices.len();
    let mut global = ctx.global_init();
    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    for round in 1..=params.rounds {
        ctx.ledger.set_round(round);
        let mut updates = Vec::with_capacity(n);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            let local = local_train(
                &ctx.device_batches[d],
                &global,
                params.tau,
                params.lr,
                params.batch_size,
                &mut stream,
            )?;
            let size = ctx.device_batches[d].len();
            updates.push(DeviceUpdate {
                device: d,
                params: local,
                n: size,
                declared_n: size,
            });
        }
        let (new_global, block, _) = execute_round(ctx, updates, &global, params, round)?;
        global = new_global;
        let train_loss = ctx.weighted_train_loss(&global)?;
        let test_acc = evaluate(&global, &ctx.test)?;
        rows.push(ctx.metrics_row(round, Some(params.tau), train_loss, test_acc));
        blocks.push(block);
    }
    Ok((rows, blocks))
}
