//! Strict JSON experiment configuration: unknown keys are rejected, every
//! run is fully determined by the file plus the master seed.

use crate::adaptive::AdaptiveParams;
use crate::blockfl::BlockflParams;
use crate::data::{gen_blobs, load_idx, partition, LocalDataset, PartitionPlan, Sample};
use crate::distill::{FdParams, FldParams};
use crate::error::{Error, Result};
use crate::faug::MultfaugParams;
use crate::fedavg::FedAvgParams;
use crate::gadmm::GadmmProtocolParams;
use crate::model::{ModelKind, ModelSpec};
use crate::netsim::{CostBudget, LinkSpec, Wire};
use crate::rng::SeedSpace;
use crate::runner::RunContext;
use rand_chacha::rand_core::RngCore;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Fedavg,
    Adaptive,
    Gadmm,
    Fd,
    Fld,
    Multfaug,
    Blockfl,
    Local,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetCfg {
    /// Synthetic Gaussian blobs, with a held-out test pool of the same
    /// shape.
    Blobs {
        num_labels: usize,
        input_dim: usize,
        n_per_label: usize,
        spread: f64,
        test_per_label: usize,
    },
    /// IDX image/label file pairs (data is scaled to [0,1] by the loader).
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        num_labels: usize,
    },
}

impl DatasetCfg {
    pub fn num_labels(&self) -> usize {
        match self {
            DatasetCfg::Blobs { num_labels, .. } | DatasetCfg::Idx { num_labels, .. } => {
                *num_labels
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionCfg {
    /// Every device gets the same count of every label.
    Iid {
        num_devices: usize,
        per_device_per_label: usize,
    },
    /// Explicit device × label count matrix.
    PerLabelCounts { counts: Vec<Vec<usize>> },
    /// Per-device scarce target label; every other label abundant.
    TargetSplit {
        targets: Vec<usize>,
        target_count: usize,
        non_target_count: usize,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden_dim: usize,
}

fn default_wire_bytes() -> u32 {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub dataset: DatasetCfg,
    pub partition: PartitionCfg,
    pub model: ModelCfg,
    #[serde(default)]
    pub link: LinkSpec,
    #[serde(default = "default_wire_bytes")]
    pub wire_bytes: u32,
    #[serde(default)]
    pub budget: Option<CostBudget>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fedavg: FedAvgParams,
    #[serde(default)]
    pub adaptive: AdaptiveParams,
    #[serde(default)]
    pub gadmm: GadmmProtocolParams,
    #[serde(default)]
    pub fd: FdParams,
    #[serde(default)]
    pub fld: FldParams,
    #[serde(default)]
    pub multfaug: MultfaugParams,
    #[serde(default)]
    pub blockfl: BlockflParams,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn protocol_name(&self) -> String {
        match self.protocol {
            Protocol::Fedavg => "fedavg",
            Protocol::Adaptive => "adaptive",
            Protocol::Gadmm => "gadmm",
            Protocol::Fd => "fd",
            Protocol::Fld => "fld",
            Protocol::Multfaug => "multfaug",
            Protocol::Blockfl => "blockfl",
            Protocol::Local => "local",
        }
        .to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.num_labels() < 2 {
            return Err(Error::Config("dataset needs at least 2 labels".into()));
        }
        if self.wire_bytes == 0 {
            return Err(Error::Config("wire_bytes must be >= 1".into()));
        }
        self.link
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(budget) = &self.budget {
            budget
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.protocol == Protocol::Adaptive && self.budget.is_none() {
            return Err(Error::Config(
                "adaptive protocol requires a budget section".into(),
            ));
        }
        if let PartitionCfg::TargetSplit { targets, .. } = &self.partition {
            let labels = self.dataset.num_labels();
            if targets.iter().any(|t| *t >= labels) {
                return Err(Error::Config("target label out of range".into()));
            }
        }
        Ok(())
    }

    fn model_spec(&self, input_dim: usize, num_labels: usize) -> Result<ModelSpec> {
        let spec = match self.model.kind {
            ModelKind::Lr => ModelSpec::lr(input_dim, num_labels),
            ModelKind::Mlp1 => ModelSpec::mlp1(input_dim, self.model.hidden_dim, num_labels),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn partition_plan(&self, num_labels: usize, shuffle_seed: u64) -> PartitionPlan {
        match &self.partition {
            PartitionCfg::Iid {
                num_devices,
                per_device_per_label,
            } => PartitionPlan::iid(
                *num_devices,
                num_labels,
                *per_device_per_label,
                shuffle_seed,
            ),
            PartitionCfg::PerLabelCounts { counts } => PartitionPlan {
                num_devices: counts.len(),
                per_label_counts: counts.clone(),
                shuffle_seed,
            },
            PartitionCfg::TargetSplit {
                targets,
                target_count,
                non_target_count,
            } => PartitionPlan::target_split(
                targets,
                num_labels,
                *target_count,
                *non_target_count,
                shuffle_seed,
            ),
        }
    }

    /// Materialize datasets, partition and context for this config.
    pub fn build_context(&self) -> Result<RunContext> {
        let space = SeedSpace::new(self.master_seed);
        let (train_pool, test_pool, input_dim): (Vec<Sample>, Vec<Sample>, usize) =
            match &self.dataset {
                DatasetCfg::Blobs {
                    num_labels,
                    input_dim,
                    n_per_label,
                    spread,
                    test_per_label,
                } => {
                    let train_seed = space.stream("blobs-train", &[]).next_u64();
                    let test_seed = space.stream("blobs-test", &[]).next_u64();
                    (
                        gen_blobs(*num_labels, *input_dim, *n_per_label, *spread, train_seed),
                        gen_blobs(*num_labels, *input_dim, *test_per_label, *spread, test_seed),
                        *input_dim,
                    )
                }
                DatasetCfg::Idx {
                    images,
                    labels,
                    test_images,
                    test_labels,
                    ..
                } => {
                    let train = load_idx(images, labels)?;
                    let test = load_idx(test_images, test_labels)?;
                    let dim = train
                        .first()
                        .map(|s| s.features.len())
                        .ok_or(Error::EmptyDataset)?;
                    (train, test, dim)
                }
            };
        let num_labels = self.dataset.num_labels();
        let shuffle_seed = space.stream("partition-shuffle", &[]).next_u64();
        let plan = self.partition_plan(num_labels, shuffle_seed);
        let devices = partition(&train_pool, &plan)?;
        let spec = self.model_spec(input_dim, num_labels)?;
        Ok(RunContext::new(
            spec,
            devices,
            LocalDataset {
                device_id: usize::MAX,
                samples: test_pool,
            },
            self.link,
            Wire::new(self.wire_bytes),
            space,
            self.budget,
        ))
    }
}
