//! Deterministic desk-scale simulator for communication-efficient federated
//! learning. Implements parameter-exchange protocols (FedAvg with adaptive
//! intervals, quantization and sparsification; chain-topology group ADMM;
//! blockchained FL), model-output exchange (federated distillation and its
//! FD-uplink/FL-downlink hybrid) and surrogate-data exchange (data
//! summarization, multi-hop federated augmentation), all on top of an
//! explicit payload/cost accounting substrate.

pub mod adaptive;
pub mod blockfl;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod faug;
pub mod fedavg;
pub mod gadmm;
mod linalg;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod rng;
pub mod runner;
pub mod summarize;

pub use error::{Error, Result};
