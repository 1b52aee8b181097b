//! Adaptive interval controller: estimates gradient divergence and loss
//! smoothness online and re-selects the communication interval each round
//! under a joint computation/communication budget.
//!
//! The score balances progress per budget against a divergence penalty:
//! `score(tau) = 1/(T(tau)·tau) + rho_hat·h(tau)/tau` where
//! `T(tau) = remaining/(tau·N·c_comp + c_comm)` is the number of rounds the
//! budget still affords and `h` is the local-drift gap below.

use crate::error::{Error, Result};
use crate::fedavg::{aggregate, local_train};
use crate::linalg;
use crate::metrics::MetricsRow;
use crate::model::{evaluate, loss_and_grad};
use crate::netsim::{CostBudget, Direction, Message, NodeId};
use crate::rng;
use crate::runner::RunContext;
use serde::{Deserialize, Serialize};

/// Online estimates of data heterogeneity and loss geometry.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptiveEstimates {
    /// Weighted mean distance between local gradients and their average.
    pub delta_hat: f64,
    /// Secant estimate of the gradient Lipschitz constant, smoothed.
    pub beta_hat: f64,
    /// Secant estimate of the loss Lipschitz constant, smoothed.
    pub rho_hat: f64,
    initialized: bool,
}

const SMOOTHING: f64 = 0.5;

impl AdaptiveEstimates {
    /// Blend fresh secant measurements in (factor 0.5 once initialized).
    pub fn update_geometry(&mut self, beta_raw: f64, rho_raw: f64) {
        if self.initialized {
            self.beta_hat = SMOOTHING * self.beta_hat + (1.0 - SMOOTHING) * beta_raw;
            self.rho_hat = SMOOTHING * self.rho_hat + (1.0 - SMOOTHING) * rho_raw;
        } else {
            self.beta_hat = beta_raw;
            self.rho_hat = rho_raw;
            self.initialized = true;
        }
    }

    /// True once at least one geometry measurement has landed.
    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// Weighted gradient divergence: `sum_d w_d ||g_d - g_bar||` with
/// `g_bar = sum_d w_d g_d` and weights normalized to 1.
pub fn estimate_divergence(grads: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    if grads.len() < 2 {
        return Err(Error::InvalidArgument(
            "divergence needs at least two devices".into(),
        ));
    }
    if grads.len() != weights.len() {
        return Err(Error::DimMismatch {
            context: "divergence weights",
            expected: grads.len(),
            actual: weights.len(),
        });
    }
    let dim = grads[0].len();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; dim];
    for (g, w) in grads.iter().zip(weights) {
        if g.len() != dim {
            return Err(Error::DimMismatch {
                context: "divergence gradients",
                expected: dim,
                actual: g.len(),
            });
        }
        linalg::axpy(&mut mean, w / total, g);
    }
    let mut delta = 0.0;
    for (g, w) in grads.iter().zip(weights) {
        delta += (w / total) * linalg::norm2(&linalg::sub(g, &mean));
    }
    Ok(delta)
}

/// Secant smoothness along one step: `||g_cur - g_prev|| / ||w_cur - w_prev||`.
/// `None` when the displacement is zero (caller keeps its previous estimate).
pub fn secant_smoothness(
    w_prev: &[f64],
    w_cur: &[f64],
    grad_prev: &[f64],
    grad_cur: &[f64],
) -> Option<f64> {
    let dw = linalg::norm2(&linalg::sub(w_cur, w_prev));
    if dw == 0.0 {
        return None;
    }
    Some(linalg::norm2(&linalg::sub(grad_cur, grad_prev)) / dw)
}

/// Secant loss Lipschitz estimate: `|f_cur - f_prev| / ||w_cur - w_prev||`.
pub fn secant_lipschitz(w_prev: &[f64], w_cur: &[f64], f_prev: f64, f_cur: f64) -> Option<f64> {
    let dw = linalg::norm2(&linalg::sub(w_cur, w_prev));
    if dw == 0.0 {
        return None;
    }
    Some((f_cur - f_prev).abs() / dw)
}

/// Divergence gap accumulated over `tau` local steps:
/// `h(tau) = (delta/beta)·((lr·beta + 1)^tau - 1) - lr·delta·tau`, zero when
/// beta is negligible. `h(1) = 0` identically.
pub fn divergence_gap(delta: f64, beta: f64, lr: f64, tau: u64) -> f64 {
    if beta < 1e-8 {
        return 0.0;
    }
    (delta / beta) * ((lr * beta + 1.0).powi(tau as i32) - 1.0) - lr * delta * tau as f64
}

#[derive(Debug, Clone)]
pub struct IntervalDecision {
    pub tau_star: u64,
    pub candidate_scores: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub enum IntervalOutcome {
    Chosen(IntervalDecision),
    Exhausted,
}

/// Pick the interval minimizing the score over the candidate set; ties go
/// to the smallest tau, and a fully infinite score surface means the budget
/// is spent.
pub fn choose_interval(
    estimates: &AdaptiveEstimates,
    remaining: f64,
    budget: &CostBudget,
    num_devices: usize,
    lr: f64,
    candidates: &[u64],
) -> IntervalOutcome {
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(u64, f64)> = None;
    for &tau in candidates {
        let round_cost = tau as f64 * budget.c_comp * num_devices as f64 + budget.c_comm;
        let rounds_affordable = remaining / round_cost;
        let score = if rounds_affordable <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / (rounds_affordable * tau as f64)
                + estimates.rho_hat
                    * divergence_gap(estimates.delta_hat, estimates.beta_hat, lr, tau)
                    / tau as f64
        };
        scores.push((tau, score));
        let better = match best {
            None => score < f64::INFINITY,
            Some((_, b)) => score < b,
        };
        if better {
            best = Some((tau, score));
        }
    }
    match best {
        Some((tau_star, _)) => IntervalOutcome::Chosen(IntervalDecision {
            tau_star,
            candidate_scores: scores,
        }),
        None => IntervalOutcome::Exhausted,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveParams {
    pub lr: f64,
    pub batch_size: usize,
    /// Candidate intervals are 1..=tau_max.
    pub tau_max: u64,
    /// Optional extra cap on rounds (the budget is the usual stop).
    pub max_rounds: Option<u64>,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            lr: 0.1,
            batch_size: 16,
            tau_max: 100,
            max_rounds: None,
        }
    }
}

/// Budgeted FedAvg whose interval is re-chosen every round from fresh
/// estimates. Rounds stay at tau = 1 until both the divergence and the
/// geometry estimates exist (two probe rounds); gradients are measured at
/// the start-of-round global model and their upload is charged.
pub fn run_adaptive(ctx: &mut RunContext, params: &AdaptiveParams) -> Result<Vec<MetricsRow>> {
    let budget = ctx
        .budget
        .as_ref()
        .map(|b| b.budget)
        .ok_or_else(|| Error::Config("adaptive protocol requires a cost budget".into()))?;
    if params.lr <= 0.0 || params.tau_max < 1 {
        return Err(Error::InvalidArgument(
            "adaptive needs lr > 0 and tau_max >= 1".into(),
        ));
    }
    let n = ctx.devices.len();
    let p = ctx.spec.param_count();
    let candidates: Vec<u64> = (1..=params.tau_max).collect();
    let weights: Vec<f64> = ctx.device_batches.iter().map(|b| b.len() as f64).collect();

    let mut global = ctx.global_init();
    let mut estimates = AdaptiveEstimates::default();
    let mut prev_probe: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (w, g_bar, loss)
    let mut tau = 1u64;
    let mut rows = Vec::new();
    let max_rounds = params.max_rounds.unwrap_or(u64::MAX);
    let mut round = 0u64;

    loop {
        if round >= max_rounds {
            break;
        }
        {
            let state = ctx.budget.as_ref().unwrap();
            if state.remaining() < state.round_cost(tau, n as u64) {
                break;
            }
        }
        round += 1;
        ctx.ledger.set_round(round);

        for d in 0..n {
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::DenseParams { params: p },
                Direction::Downlink,
                NodeId::Server,
                NodeId::Device(d),
            );
        }

        // Probe gradients and losses at the start-of-round global model.
        let mut probe_grads = Vec::with_capacity(n);
        let mut loss_acc = 0.0;
        for d in 0..n {
            let mut stream = ctx.seeds.stream("grad-probe", &[d as u64, round]);
            let idx = rng::sample_with_replacement(
                &mut stream,
                ctx.device_batches[d].len(),
                params.batch_size,
            );
            let minibatch = ctx.device_batches[d].select(&idx);
            let (_, grad) = loss_and_grad(&global, &minibatch, None, 0.0, 1.0)?;
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::DenseParams { params: p },
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            probe_grads.push(grad.values);
            let (full_loss, _) = loss_and_grad(&global, &ctx.device_batches[d], None, 0.0, 1.0)?;
            loss_acc += weights[d] * full_loss;
        }
        let w_total: f64 = weights.iter().sum();
        let loss_at_w = loss_acc / w_total;

        let mut uploads = Vec::with_capacity(n);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            let local = local_train(
                &ctx.device_batches[d],
                &global,
                tau,
                params.lr,
                params.batch_size,
                &mut stream,
            )?;
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::DenseParams { params: p },
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            uploads.push((local, weights[d]));
        }
        let new_global = aggregate(&uploads)?;

        ctx.budget.as_mut().unwrap().consume(tau, 1, n as u64);

        // Update estimates from this round's probes.
        if n >= 2 {
            estimates.delta_hat = estimate_divergence(&probe_grads, &weights)?;
        }
        let mut g_bar = vec![0.0; p];
        for (g, w) in probe_grads.iter().zip(&weights) {
            linalg::axpy(&mut g_bar, w / w_total, g);
        }
        if let Some((w_prev, g_prev, f_prev)) = &prev_probe {
            if let (Some(beta_raw), Some(rho_raw)) = (
                secant_smoothness(w_prev, &global.values, g_prev, &g_bar),
                secant_lipschitz(w_prev, &global.values, *f_prev, loss_at_w),
            ) {
                estimates.update_geometry(beta_raw, rho_raw);
            }
        }
        prev_probe = Some((global.values.clone(), g_bar, loss_at_w));
        global = new_global;

        let train_loss = ctx.weighted_train_loss(&global)?;
        let test_acc = evaluate(&global, &ctx.test)?;
        rows.push(ctx.metrics_row(round, Some(tau), train_loss, test_acc));

        let remaining = ctx.budget.as_ref().unwrap().remaining();
        match choose_interval(&estimates, remaining, &budget, n, params.lr, &candidates) {
            IntervalOutcome::Chosen(decision) => {
                tau = if estimates.is_initialized() {
                    decision.tau_star
                } else {
                    1
                };
            }
            IntervalOutcome::Exhausted => break,
        }
    }
    if rows.is_empty() {
        return Err(Error::BudgetExhaustedEarly);
    }
    Ok(rows)
}
