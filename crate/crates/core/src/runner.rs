//! Experiment runner: shared per-run state handed to every protocol engine,
//! plus config dispatch, deterministic artifact emission and sweeps.

use crate::config::ExperimentConfig;
use crate::data::LocalDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{loss_and_grad, Batch, ModelSpec, ParamVector};
use crate::netsim::{BudgetState, CostBudget, LinkSpec, PayloadLedger, Wire};
use crate::rng::SeedSpace;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

/// Mutable state shared by one protocol run: device data, test set, the
/// payload ledger, the optional cost budget and the random stream root.
/// Engines are the single writer of the ledger and budget.
pub struct RunContext {
    pub spec: ModelSpec,
    pub devices: Vec<LocalDataset>,
    pub device_batches: Vec<Batch>,
    pub test: Batch,
    pub link: LinkSpec,
    pub wire: Wire,
    pub seeds: SeedSpace,
    pub ledger: PayloadLedger,
    pub budget: Option<BudgetState>,
}

impl RunContext {
    pub fn new(
        spec: ModelSpec,
        devices: Vec<LocalDataset>,
        test: LocalDataset,
        link: LinkSpec,
        wire: Wire,
        seeds: SeedSpace,
        budget: Option<CostBudget>,
    ) -> Self {
        let device_batches = devices.iter().map(|d| d.to_batch(spec.input_dim)).collect();
        let test = test.to_batch(spec.input_dim);
        Self {
            spec,
            devices,
            device_batches,
            test,
            link,
            wire,
            seeds,
            ledger: PayloadLedger::new(),
            budget: budget.map(BudgetState::new),
        }
    }

    /// Common initial parameters shared by server and devices.
    pub fn global_init(&self) -> ParamVector {
        let mut stream = self.seeds.stream("init-global", &[]);
        ParamVector::init(self.spec, &mut stream)
    }

    /// Minibatch stream for one device and round; identical keying across
    /// protocols keeps degenerate reductions bit-exact.
    pub fn batch_stream(&self, device: usize, round: u64) -> ChaCha8Rng {
        self.seeds.stream("batch", &[device as u64, round])
    }

    /// Data-size-weighted mean loss of `params` over all local datasets.
    pub fn weighted_train_loss(&self, params: &ParamVector) -> Result<f64> {
        let mut acc = 0.0;
        let mut total = 0.0;
        for batch in &self.device_batches {
            if batch.is_empty() {
                continue;
            }
            let w = batch.len() as f64;
            let (loss, _) = loss_and_grad(params, batch, None, 0.0, 1.0)?;
            acc += w * loss;
            total += w;
        }
        Ok(acc / total)
    }

    pub fn metrics_row(
        &self,
        round: u64,
        tau: Option<u64>,
        train_loss: f64,
        test_acc: f64,
    ) -> MetricsRow {
        MetricsRow {
            round,
            tau,
            cum_uplink_bits: self.ledger.uplink_bytes() * 8,
            cum_downlink_bits: self.ledger.downlink_bytes() * 8,
            cum_cost: self.budget.map(|b| b.consumed).unwrap_or(0.0),
            train_loss,
            test_acc,
            sim_time: self.ledger.sim_time(),
        }
    }
}

/// Everything a finished run produced.
pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub ledger_csv: String,
    pub summary: Summary,
    pub privacy: Option<crate::faug::PrivacyReport>,
    pub blocks: Option<Vec<crate::blockfl::BlockRecord>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub protocol: String,
    pub rounds_completed: u64,
    pub final_train_loss: f64,
    pub final_test_acc: f64,
    pub cum_uplink_bits: u64,
    pub cum_downlink_bits: u64,
    pub cum_cost: f64,
    pub sim_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_privacy: Option<f64>,
}

fn summarize_rows(protocol: &str, rows: &[MetricsRow], mean_privacy: Option<f64>) -> Summary {
    let last = rows.last();
    Summary {
        protocol: protocol.to_string(),
        rounds_completed: rows.len() as u64,
        final_train_loss: last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        final_test_acc: last.map(|r| r.test_acc).unwrap_or(f64::NAN),
        cum_uplink_bits: last.map(|r| r.cum_uplink_bits).unwrap_or(0),
        cum_downlink_bits: last.map(|r| r.cum_downlink_bits).unwrap_or(0),
        cum_cost: last.map(|r| r.cum_cost).unwrap_or(0.0),
        sim_time: last.map(|r| r.sim_time).unwrap_or(0.0),
        mean_privacy,
    }
}

/// Execute a fully parsed config in memory.
pub fn execute(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let mut ctx = config.build_context()?;
    let protocol = config.protocol_name();
    let mut privacy = None;
    let mut blocks = None;
    let metrics = match &config.protocol {
        crate::config::Protocol::Fedavg => crate::fedavg::run_fedavg(&mut ctx, &config.fedavg)?,
        crate::config::Protocol::Local => crate::fedavg::run_local(&mut ctx, &config.fedavg)?,
        crate::config::Protocol::Adaptive => {
            crate::adaptive::run_adaptive(&mut ctx, &config.adaptive)?
        }
        crate::config::Protocol::Gadmm => {
            crate::gadmm::run_gadmm_protocol(&mut ctx, &config.gadmm)?
        }
        crate::config::Protocol::Fd => crate::distill::run_fd(&mut ctx, &config.fd)?,
        crate::config::Protocol::Fld => crate::distill::run_fld(&mut ctx, &config.fld)?,
        crate::config::Protocol::Multfaug => {
            let (rows, report) = crate::faug::run_multfaug(&mut ctx, &config.multfaug)?;
            privacy = Some(report);
            rows
        }
        crate::config::Protocol::Blockfl => {
            let (rows, log) = crate::blockfl::run_blockfl(&mut ctx, &config.blockfl)?;
            blocks = Some(log);
            rows
        }
    };
    let mean_privacy = privacy.as_ref().map(|p| p.mean_privacy);
    Ok(RunArtifacts {
        summary: summarize_rows(&protocol, &metrics, mean_privacy),
        metrics,
        ledger_csv: ctx.ledger.to_csv(),
        privacy,
        blocks,
    })
}

/// Run a config and write metrics.csv, ledger.csv, summary.json and any
/// protocol extras under `out_dir`.
pub fn run_to_dir(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let artifacts = execute(config)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("metrics.csv"),
        crate::metrics::to_csv(&artifacts.metrics),
    )?;
    std::fs::write(out_dir.join("ledger.csv"), &artifacts.ledger_csv)?;
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&artifacts.summary)?,
    )?;
    if let Some(privacy) = &artifacts.privacy {
        std::fs::write(
            out_dir.join("privacy.json"),
            serde_json::to_string_pretty(privacy)?,
        )?;
    }
    if let Some(blocks) = &artifacts.blocks {
        let mut lines = String::new();
        for b in blocks {
            lines.push_str(&serde_json::to_string(b)?);
            lines.push('\n');
        }
        std::fs::write(out_dir.join("blocks.jsonl"), lines)?;
    }
    Ok(artifacts)
}

/// One full run per value of a dotted config key, all sharing the master
/// seed, plus a combined comparison CSV.
pub fn sweep_to_dir(
    base_json: &serde_json::Value,
    param: &str,
    values: &[String],
    out_root: &Path,
) -> Result<Vec<(String, Summary)>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one value".into(),
        ));
    }
    let mut results = Vec::new();
    for value in values {
        let mut patched = base_json.clone();
        set_dotted(&mut patched, param, parse_scalar(value))?;
        let config: ExperimentConfig =
            serde_json::from_value(patched).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        let sub = out_root.join(format!("{param}={value}"));
        let artifacts = run_to_dir(&config, &sub)?;
        results.push((value.clone(), artifacts.summary));
    }
    std::fs::create_dir_all(out_root)?;
    let mut csv = String::from(
        "value,rounds,final_train_loss,final_test_acc,cum_uplink_bits,cum_downlink_bits,cum_cost,sim_time,mean_privacy\n",
    );
    for (value, s) in &results {
        let privacy = s.mean_privacy.map(|p| p.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            value,
            s.rounds_completed,
            s.final_train_loss,
            s.final_test_acc,
            s.cum_uplink_bits,
            s.cum_downlink_bits,
            s.cum_cost,
            s.sim_time,
            privacy
        ));
    }
    std::fs::write(out_root.join("comparison.csv"), csv)?;
    Ok(results)
}

fn parse_scalar(raw: &str) -> serde_json::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return serde_json::Value::from(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return serde_json::Value::from(v);
    }
    match raw {
        "true" => serde_json::Value::Bool(true),
        "false" => serde_json::Value::Bool(false),
        _ => serde_json::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut current = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = current
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep path '{path}' hit a non-object")))?;
        if i == parts.len() - 1 {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        current = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty sweep path '{path}'")))
}
