//! Model-output exchange: federated distillation (per-label average logit
//! tables, leave-one-out global averaging, distillation-regularized local
//! training) and the hybrid that uploads logits plus seed samples and
//! downloads parameters produced by server-side knowledge distillation.

pub use crate::model::LogitTable;

use crate::data::{LocalDataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{
    evaluate, forward_logits, loss_and_grad, sgd_step, Batch, ModelSpec, ParamVector,
};
use crate::netsim::{Direction, Message, NodeId};
use crate::rng;
use crate::runner::RunContext;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fold a batch of logit vectors into the running per-label means.
pub fn accumulate_logits(
    table: &mut LogitTable,
    batch_logits: &[Vec<f64>],
    labels: &[usize],
) -> Result<()> {
    for (logits, &label) in batch_logits.iter().zip(labels) {
        table.push(label, logits)?;
    }
    Ok(())
}

/// Count-weighted per-row average over device tables; rows absent
/// everywhere stay absent.
pub fn global_average(tables: &[LogitTable]) -> LogitTable {
    let num_labels = tables.first().map(|t| t.num_labels()).unwrap_or(0);
    let mut out = LogitTable::new(num_labels);
    for t in tables {
        out.merge(t);
    }
    out
}

/// Global average with device `exclude` removed, so no device distills
/// against its own contribution.
pub fn leave_one_out(tables: &[LogitTable], exclude: usize) -> LogitTable {
    let num_labels = tables.first().map(|t| t.num_labels()).unwrap_or(0);
    let mut out = LogitTable::new(num_labels);
    for (d, t) in tables.iter().enumerate() {
        if d != exclude {
            out.merge(t);
        }
    }
    out
}

/// A device's fixed seed subset for server-side distillation.
#[derive(Debug, Clone)]
pub struct SeedBatch {
    pub samples: Vec<Sample>,
    pub fraction: f64,
}

/// ceil(fraction·n) samples drawn without replacement from the device.
pub fn select_seeds(
    dataset: &LocalDataset,
    fraction: f64,
    stream: &mut ChaCha8Rng,
) -> Result<SeedBatch> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(
            "seed fraction must be in (0, 1]".into(),
        ));
    }
    let n = dataset.samples.len();
    let count = (fraction * n as f64).ceil() as usize;
    let samples = rng::sample_without_replacement(stream, n, count)
        .into_iter()
        .map(|i| dataset.samples[i].clone())
        .collect();
    Ok(SeedBatch { samples, fraction })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdParams {
    /// Local steps between logit exchanges.
    pub interval: u64,
    pub rounds: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for FdParams {
    fn default() -> Self {
        Self {
            interval: 5,
            rounds: 30,
            lr: 0.1,
            batch_size: 16,
            alpha: 0.1,
            temperature: 2.0,
        }
    }
}

/// One device's training segment: `interval` SGD steps with the optional
/// distillation target, accumulating the minibatch logits (at pre-step
/// parameters) into a fresh local table.
fn train_segment(
    data: &Batch,
    params_in: &ParamVector,
    target: Option<&LogitTable>,
    interval: u64,
    lr: f64,
    batch_size: usize,
    alpha: f64,
    temperature: f64,
    stream: &mut ChaCha8Rng,
) -> Result<(ParamVector, LogitTable)> {
    let mut params = params_in.clone();
    let mut table = LogitTable::new(params.spec.num_labels);
    for _ in 0..interval {
        let idx = rng::sample_with_replacement(stream, data.len(), batch_size);
        let minibatch = data.select(&idx);
        let logits = forward_logits(&params, &minibatch)?;
        accumulate_logits(&mut table, &logits, &minibatch.labels)?;
        let (_, grad) = loss_and_grad(&params, &minibatch, target, alpha, temperature)?;
        params = sgd_step(&params, &grad, lr)?;
    }
    Ok((params, table))
}

/// Federated distillation: devices exchange logit tables only; no
/// parameter payload ever crosses a link. On round 1 no global table
/// exists yet, so devices train with alpha = 0.
pub fn run_fd(ctx: &mut RunContext, params: &FdParams) -> Result<Vec<MetricsRow>> {
    let n = ctx.devices.len();
    let labels = ctx.spec.num_labels;
    let mut models: Vec<ParamVector> = (0..n).map(|_| ctx.global_init()).collect();
    let mut targets: Vec<Option<LogitTable>> = vec![None; n];
    let mut rows = Vec::new();

    for round in 1..=params.rounds {
        ctx.ledger.set_round(round);
        // downlink of last round's leave-one-out tables (absent on round 1)
        for (d, target) in targets.iter().enumerate() {
            if target.is_some() {
                ctx.ledger.charge(
                    &ctx.link,
                    &ctx.wire,
                    &Message::LogitTable { labels },
                    Direction::Downlink,
                    NodeId::Server,
                    NodeId::Device(d),
                );
            }
        }

        let mut tables = Vec::with_capacity(n);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            let alpha = if targets[d].is_some() {
                params.alpha
            } else {
                0.0
            };
            let (model, table) = train_segment(
                &ctx.device_batches[d],
                &models[d],
                targets[d].as_ref(),
                params.interval,
                params.lr,
                params.batch_size,
                alpha,
                params.temperature,
                &mut stream,
            )?;
            models[d] = model;
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::LogitTable { labels },
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            tables.push(table);
        }
        for d in 0..n {
            let loo = leave_one_out(&tables, d);
            let has_rows = (0..labels).any(|l| loo.count(l) > 0);
            targets[d] = if has_rows { Some(loo) } else { None };
        }

        let mut loss_acc = 0.0;
        let mut acc_acc = 0.0;
        let mut w_total = 0.0;
        for d in 0..n {
            let w = ctx.device_batches[d].len() as f64;
            let (loss, _) = loss_and_grad(&models[d], &ctx.device_batches[d], None, 0.0, 1.0)?;
            loss_acc += w * loss;
            acc_acc += w * evaluate(&models[d], &ctx.test)?;
            w_total += w;
        }
        rows.push(ctx.metrics_row(
            round,
            Some(params.interval),
            loss_acc / w_total,
            acc_acc / w_total,
        ));
    }
    Ok(rows)
}

/// Final per-device FD models; used for reduction checks against isolated
/// training.
pub fn fd_models(ctx: &mut RunContext, params: &FdParams) -> Result<Vec<ParamVector>> {
    let n = ctx.devices.len();
    let mut models: Vec<ParamVector> = (0..n).map(|_| ctx.global_init()).collect();
    let mut targets: Vec<Option<LogitTable>> = vec![None; n];
    for round in 1..=params.rounds {
        let mut tables = Vec::with_capacity(n);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            let alpha = if targets[d].is_some() {
                params.alpha
            } else {
                0.0
            };
            let (model, table) = train_segment(
                &ctx.device_batches[d],
                &models[d],
                targets[d].as_ref(),
                params.interval,
                params.lr,
                params.batch_size,
                alpha,
                params.temperature,
                &mut stream,
            )?;
            models[d] = model;
            tables.push(table);
        }
        for d in 0..n {
            let loo = leave_one_out(&tables, d);
            let has_rows = (0..ctx.spec.num_labels).any(|l| loo.count(l) > 0);
            targets[d] = if has_rows { Some(loo) } else { None };
        }
    }
    Ok(models)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FldParams {
    pub interval: u64,
    pub rounds: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each device's data uploaded once per round as seeds.
    pub seed_fraction: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub server_epochs: u64,
    pub server_lr: f64,
    pub server_batch_size: usize,
    /// Warm-start each round's server model from the previous global.
    pub warm_start: bool,
}

impl Default for FldParams {
    fn default() -> Self {
        Self {
            interval: 5,
            rounds: 30,
            lr: 0.1,
            batch_size: 16,
            seed_fraction: 0.02,
            alpha: 0.1,
            temperature: 2.0,
            server_epochs: 20,
            server_lr: 0.1,
            server_batch_size: 32,
            warm_start: true,
        }
    }
}

/// Convert global average logits plus pooled seed samples into global
/// parameters by supervised training with a distillation regularizer.
#[allow(clippy::too_many_arguments)]
pub fn fld_server_distill(
    global_table: &LogitTable,
    seeds: &Batch,
    spec: ModelSpec,
    epochs: u64,
    alpha: f64,
    temperature: f64,
    lr: f64,
    batch_size: usize,
    warm: Option<&ParamVector>,
    stream: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    if seeds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut params = match warm {
        Some(p) => p.clone(),
        None => ParamVector::zeros(spec),
    };
    let n = seeds.len();
    for _ in 0..epochs {
        let order = rng::sample_without_replacement(stream, n, n);
        for chunk in order.chunks(batch_size.max(1)) {
            let minibatch = seeds.select(chunk);
            let (_, grad) =
                loss_and_grad(&params, &minibatch, Some(global_table), alpha, temperature)?;
            params = sgd_step(&params, &grad, lr)?;
        }
    }
    Ok(params)
}

/// FD on the uplink (logit tables plus a few seed samples), vanilla FL on
/// the downlink (parameters from server-side distillation).
pub fn run_fld(ctx: &mut RunContext, params: &FldParams) -> Result<Vec<MetricsRow>> {
    let n = ctx.devices.len();
    let labels = ctx.spec.num_labels;
    let p = ctx.spec.param_count();
    let dim = ctx.spec.input_dim;
    let mut global = ctx.global_init();
    let mut rows = Vec::new();

    // Seed subsets are fixed per device for the whole run.
    let mut seed_batches = Vec::with_capacity(n);
    for d in 0..n {
        let mut stream = ctx.seeds.stream("seeds", &[d as u64]);
        seed_batches.push(select_seeds(
            &ctx.devices[d],
            params.seed_fraction,
            &mut stream,
        )?);
    }
    let pooled: Vec<Sample> = seed_batches
        .iter()
        .flat_map(|s| s.samples.iter().cloned())
        .collect();
    if pooled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pooled_ds = LocalDataset {
        device_id: usize::MAX,
        samples: pooled,
    };
    let pooled_batch = pooled_ds.to_batch(dim);

    for round in 1..=params.rounds {
        ctx.ledger.set_round(round);
        let mut tables = Vec::with_capacity(n);
        for d in 0..n {
            let mut stream = ctx.batch_stream(d, round);
            let (model, table) = train_segment(
                &ctx.device_batches[d],
                &global,
                None,
                params.interval,
                params.lr,
                params.batch_size,
                0.0,
                params.temperature,
                &mut stream,
            )?;
            // devices keep no state; only the logit table and seeds go up
            let _ = model;
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::LogitTable { labels },
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            ctx.ledger.charge(
                &ctx.link,
                &ctx.wire,
                &Message::DenseSamples {
                    count: seed_batches[d].samples.len(),
                    dim,
                },
                Direction::Uplink,
                NodeId::Device(d),
                NodeId::Server,
            );
            tables.push(table);
        }
        let global_table = global_average(&tables);
        let mut stream = ctx.seeds.stream("distill", &[round]);
        global = fld_server_distill(
            &global_table,
            &pooled_batch,
            ctx.spec,
            params.server_epochs,
            params.alpha,
            params.temperature,
            params.server_lr,
            params.server_batch_size,
            if params.warm_start {
                Some(&global)
            } else {
                None
            },
            &mut stream,
        )?;
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

        let train_loss = ctx.weighted_train_loss(&global)?;
        let test_acc = evaluate(&global, &ctx.test)?;
        rows.push(ctx.metrics_row(round, Some(params.interval), train_loss, test_acc));
    }
    Ok(rows)
}
