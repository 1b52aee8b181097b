//! Vanilla FL engine: fixed-interval local SGD, data-size-weighted server
//! averaging, and optional quantized or top-k sparse upload payloads with
//! error feedback.

use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{evaluate, loss_and_grad, sgd_step, Batch, ParamVector};
use crate::netsim::{Direction, Message, NodeId, Wire};
use crate::rng;
use crate::runner::RunContext;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PayloadMode {
    #[default]
    Dense,
    Quantized {
        bits: u8,
    },
    Sparse {
        fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedAvgParams {
    /// Local iterations per communication round.
    pub tau: u64,
    /// Round cap; runs until the budget is exhausted when absent.
    pub rounds: Option<u64>,
    pub lr: f64,
    pub batch_size: usize,
    pub payload_mode: PayloadMode,
    /// Uniform instead of data-size aggregation weights.
    pub uniform_weights: bool,
}

impl Default for FedAvgParams {
    fn default() -> Self {
        Self {
            tau: 5,
            rounds: Some(30),
            lr: 0.1,
            batch_size: 16,
            payload_mode: PayloadMode::Dense,
            uniform_weights: false,
        }
    }
}

impl FedAvgParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::InvalidArgument("tau must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("lr must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        match self.payload_mode {
            PayloadMode::Quantized { bits } if !(1..=32).contains(&bits) => Err(
                Error::InvalidArgument("quantizer bits must be 1..=32".into()),
            ),
            PayloadMode::Sparse { fraction } if !(fraction > 0.0 && fraction <= 1.0) => Err(
                Error::InvalidArgument("sparse fraction must be in (0, 1]".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// `tau` SGD steps on minibatches drawn with replacement from the device's
/// data, starting from `params_in`.
pub fn local_train(
    data: &Batch,
    params_in: &ParamVector,
    tau: u64,
    lr: f64,
    batch_size: usize,
    stream: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    if tau < 1 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut params = params_in.clone();
    for _ in 0..tau {
        let idx = rng::sample_with_replacement(stream, data.len(), batch_size);
        let minibatch = data.select(&idx);
        let (_, grad) = loss_and_grad(&params, &minibatch, None, 0.0, 1.0)?;
        params = sgd_step(&params, &grad, lr)?;
    }
    Ok(params)
}

/// Weighted parameter average; weights are typically local dataset sizes.
pub fn aggregate(updates: &[(ParamVector, f64)]) -> Result<ParamVector> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one update".into()))?;
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "aggregate weights must sum to a positive value".into(),
        ));
    }
    let mut out = ParamVector::zeros(first.spec);
    for (params, w) in updates {
        first.check_shape(params, "aggregate")?;
        let scale = w / total;
        for (acc, v) in out.values.iter_mut().zip(&params.values) {
            *acc += scale * v;
        }
    }
    Ok(out)
}

/// Uniform quantization of a parameter vector to `2^bits` levels over its
/// own [min, max] range, with the scale/offset needed to decode.
#[derive(Debug, Clone)]
pub struct QuantizedVector {
    pub spec: crate::model::ModelSpec,
    pub levels: Vec<u64>,
    pub bits: u8,
    pub offset: f64,
    pub scale: f64,
}

pub fn quantize(params: &ParamVector, bits: u8) -> Result<QuantizedVector> {
    if !(1..=32).contains(&bits) {
        return Err(Error::InvalidArgument("bits must be in 1..=32".into()));
    }
    let min = params.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = params
        .values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let max_level = (1u64 << bits) - 1;
    let range = max - min;
    let scale = if range > 0.0 {
        range / max_level as f64
    } else {
        0.0
    };
    let levels = params
        .values
        .iter()
        .map(|v| {
            if scale == 0.0 {
                0
            } else {
                (((v - min) / scale).round() as u64).min(max_level)
            }
        })
        .collect();
    Ok(QuantizedVector {
        spec: params.spec,
        levels,
        bits,
        offset: min,
        scale,
    })
}

pub fn dequantize(q: &QuantizedVector) -> ParamVector {
    ParamVector {
        spec: q.spec,
        values: q
            .levels
            .iter()
            .map(|l| q.offset + *l as f64 * q.scale)
            .collect(),
    }
}

/// Quantize then dequantize; max abs error is (max-min)/(2^b - 1)/2.
pub fn quantize_roundtrip(params: &ParamVector, bits: u8) -> Result<ParamVector> {
    Ok(dequantize(&quantize(params, bits)?))
}

/// Top-k sparse message over a raw value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub param_count: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseUpdate {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count];
        for (i, v) in self.indices.iter().zip(&self.values) {
            out[*i as usize] = *v;
        }
        out
    }
}

/// Send the top ceil(s·P) coordinates of `values + residual` by magnitude;
/// the unsent mass stays in the residual (error feedback).
pub fn sparsify(values: &[f64], fraction: f64, residual: &mut Vec<f64>) -> SparseUpdate {
    let p = values.len();
    if residual.len() != p {
        *residual = vec![0.0; p];
    }
    let acc: Vec<f64> = values
        .iter()
        .zip(residual.iter())
        .map(|(v, r)| v + r)
        .collect();
    let k = Wire::sparse_sent_count(p, fraction).min(p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        acc[b]
            .abs()
            .partial_cmp(&acc[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    let mut indices = Vec::with_capacity(k);
    let mut sent = Vec::with_capacity(k);
    let mut new_residual = acc;
    for i in picked {
        indices.push(i as u32);
        sent.push(new_residual[i]);
        new_residual[i] = 0.0;
    }
    *residual = new_residual;
    SparseUpdate {
        param_count: p,
        indices,
        values: sent,
    }
}

/// Synchronous FedAvg rounds over the run context's devices. Every round
/// charges N downlink and N uplink parameter payloads to the ledger.
pub fn run_fedavg(ctx: &mut RunContext, params: &FedAvgParams) -> Result<Vec<MetricsRow>> {
    params.validate()?;
    let n = ctx.devices.len();
    let p = ctx.spec.param_count();
    let mut global = ctx.global_init();
    let mut residuals: Vec<Vec<f64>> = vec![vec![0.0; p]; n];
    let mut rows = Vec::new();
    let max_rounds = params.rounds.unwrap_or(u64::MAX);
    let mut round = 0u64;
    loop {
        if round >= max_rounds {
            break;
        }
        if let Some(budget) = &ctx.budget {
            if budget.remaining() < budget.round_cost(params.tau, n as u64) {
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

        let mut uploads = Vec::with_capacity(n);
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
            let weight = if params.uniform_weights {
                1.0
            } else {
                ctx.device_batches[d].len() as f64
            };
            let (received, msg) = match params.payload_mode {
                PayloadMode::Dense => (local, Message::DenseParams { params: p }),
                PayloadMode::Quantized { bits } => (
                    quantize_roundtrip(&local, bits)?,
                    Message::QuantizedParams { params: p, bits },
                ),
                PayloadMode::Sparse { fraction } => {
                    let delta: Vec<f64> = local
                        .values
                        .iter()
                        .zip(&global.values)
                        .map(|(l, g)| l - g)
                        .collect();
                    let sparse = sparsify(&delta, fraction, &mut residuals[d]);
                    let mut reconstructed = global.clone();
                    for (i, v) in sparse.indices.iter().zip(&sparse.values) {
                        reconstructed.values[*i as usize] += *v;
                    }
                    (
                        reconstructed,
                        Message::SparseParams {
                            sent: sparse.indices.len(),
                        },
                    )
                }
            };
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &msg,
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            uploads.push((received, weight));
        }
        global = aggregate(&uploads)?;

        if let Some(budget) = &mut ctx.budget {
            budget.consume(params.tau, 1, n as u64);
        }
        let train_loss = ctx.weighted_train_loss(&global)?;
        let test_acc = evaluate(&global, &ctx.test)?;
        rows.push(ctx.metrics_row(round, Some(params.tau), train_loss, test_acc));
        if let Some(budget) = &ctx.budget {
            if budget.remaining() <= 0.0 {
                break;
            }
        }
    }
    if rows.is_empty() && ctx.budget.is_some() {
        return Err(Error::BudgetExhaustedEarly);
    }
    Ok(rows)
}

/// Isolated local training: the no-communication baseline with the same
/// round structure and batch streams as FedAvg.
pub fn run_local(ctx: &mut RunContext, params: &FedAvgParams) -> Result<Vec<MetricsRow>> {
    params.validate()?;
    let n = ctx.devices.len();
    let rounds = params.rounds.unwrap_or(30);
    let mut models: Vec<ParamVector> = (0..n).map(|_| ctx.global_init()).collect();
    let mut rows = Vec::new();
    for round in 1..=rounds {
        ctx.ledger.set_round(round);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            models[d] = local_train(
                &ctx.device_batches[d],
                &models[d],
                params.tau,
                params.lr,
                params.batch_size,
                &mut stream,
            )?;
        }
        let mut loss_acc = 0.0;
        let mut acc_acc = 0.0;
        let mut weight_total = 0.0;
        for d in 0..n {
            let w = ctx.device_batches[d].len() as f64;
            let (loss, _) = loss_and_grad(&models[d], &ctx.device_batches[d], None, 0.0, 1.0)?;
            loss_acc += w * loss;
            acc_acc += w * evaluate(&models[d], &ctx.test)?;
            weight_total += w;
        }
        rows.push(ctx.metrics_row(
            round,
            Some(params.tau),
            loss_acc / weight_total,
            acc_acc / weight_total,
        ));
    }
    Ok(rows)
}

/// Final per-device models of `run_local`, for trajectory comparisons.
pub fn local_models(ctx: &RunContext, params: &FedAvgParams) -> Result<Vec<ParamVector>> {
    let n = ctx.devices.len();
    let rounds = params.rounds.unwrap_or(30);
    let mut models: Vec<ParamVector> = (0..n).map(|_| ctx.global_init()).collect();
    for round in 1..=rounds {
        for (d, model) in models.iter_mut().enumerate() {
            let mut stream = ctx.batch_stream(d, round);
            *model = local_train(
                &ctx.device_batches[d],
                model,
                params.tau,
                params.lr,
                params.batch_size,
                &mut stream,
            )?;
        }
    }
    Ok(models)
}
