//! Simulated communication substrate: topologies, asymmetric link
//! capacities, per-message byte accounting into an append-only ledger, and
//! the joint computation/communication cost budget.

use crate::error::{Error, Result};
use crate::summarize::CsrSample;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Network shapes used by the protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// All devices connect directly to the server.
    Star { num_devices: usize },
    /// Devices form a line; device i talks to i-1 and i+1 only.
    Chain { num_devices: usize },
    /// Device chains of bounded depth whose last element reaches the server.
    MultihopStar { num_devices: usize, depth: usize },
}

impl Topology {
    pub fn num_devices(&self) -> usize {
        match *self {
            Topology::Star { num_devices }
            | Topology::Chain { num_devices }
            | Topology::MultihopStar { num_devices, .. } => num_devices,
        }
    }

    /// Chain edges (i, i+1) for the chain topology.
    pub fn chain_edges(&self) -> Vec<(usize, usize)> {
        match *self {
            Topology::Chain { num_devices } => (0..num_devices.saturating_sub(1))
                .map(|i| (i, i + 1))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Device chains (in id order) for the multihop star.
    pub fn chains(&self) -> Vec<Vec<usize>> {
        match *self {
            Topology::MultihopStar { num_devices, depth } => {
                let depth = depth.max(1);
                (0..num_devices)
                    .collect::<Vec<_>>()
                    .chunks(depth)
                    .map(|c| c.to_vec())
                    .collect()
            }
            Topology::Star { num_devices } => (0..num_devices).map(|d| vec![d]).collect(),
            Topology::Chain { .. } => Vec::new(),
        }
    }
}

/// Per-direction link capacities in bits per simulated round.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub uplink_bits_per_round: f64,
    pub downlink_bits_per_round: f64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            uplink_bits_per_round: 1e6,
            downlink_bits_per_round: 1e7,
        }
    }
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.uplink_bits_per_round <= 0.0 || self.downlink_bits_per_round <= 0.0 {
            return Err(Error::InvalidArgument(
                "link capacities must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Uplink => write!(f, "uplink"),
            Direction::Downlink => write!(f, "downlink"),
        }
    }
}

/// Endpoint of a simulated transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeId {
    Device(usize),
    Server,
    Miner(usize),
    /// Single wireless transmission heard by all chain neighbors.
    Broadcast,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Device(i) => write!(f, "d{i}"),
            NodeId::Server => write!(f, "server"),
            NodeId::Miner(i) => write!(f, "m{i}"),
            NodeId::Broadcast => write!(f, "bcast"),
        }
    }
}

/// One simulated payload. Byte costs are fixed formulas of the message
/// shape and the configured wire precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Dense parameter (or gradient) vector of P values.
    DenseParams { params: usize },
    /// Uniformly quantized parameters: ceil(P*b/8) payload + 8 bytes of
    /// scale/offset.
    QuantizedParams { params: usize, bits: u8 },
    /// Top-k sparse parameters: k entries of (value, 4-byte index).
    SparseParams { sent: usize },
    /// Per-label average logits, L×L values.
    LogitTable { labels: usize },
    /// Binary label-indicator vector, bit-packed.
    Sdi { labels: usize },
    /// Dense sample batch: count×dim feature values.
    DenseSamples { count: usize, dim: usize },
    /// CSR-encoded sample batch per the CSR byte model.
    CsrSamples { nnz: usize, row_ptr_entries: usize },
    /// Statistical generator download: a flat count of real values.
    AugmenterModel { floats: usize },
    /// Winner block: global parameters plus a fixed 32-byte header.
    Block { params: usize },
}

impl Message {
    pub fn for_csr_batch(batch: &[CsrSample]) -> Message {
        Message::CsrSamples {
            nnz: batch.iter().map(|c| c.nnz()).sum(),
            row_ptr_entries: batch.iter().map(|c| c.row_ptr.len()).sum(),
        }
    }
}

/// Wire-precision configuration for dense real-valued payloads.
#[derive(Debug, Clone, Copy)]
pub struct Wire {
    pub wire_bytes: u32,
}

impl Default for Wire {
    fn default() -> Self {
        Self { wire_bytes: 4 }
    }
}

impl Wire {
    pub fn new(wire_bytes: u32) -> Self {
        Self { wire_bytes }
    }

    /// Byte cost of a message under this wire precision.
    pub fn payload_bytes(&self, msg: &Message) -> u64 {
        let w = self.wire_bytes as u64;
        match *msg {
            Message::DenseParams { params } => params as u64 * w,
            Message::QuantizedParams { params, bits } => {
                (params as u64 * bits as u64).div_ceil(8) + 8
            }
            Message::SparseParams { sent } => sent as u64 * (w + 4),
            Message::LogitTable { labels } => (labels * labels) as u64 * w,
            Message::Sdi { labels } => (labels as u64).div_ceil(8),
            Message::DenseSamples { count, dim } => (count * dim) as u64 * w,
            Message::CsrSamples {
                nnz,
                row_ptr_entries,
            } => {
                nnz as u64 * (crate::summarize::CSR_VALUE_BYTES + crate::summarize::CSR_COL_BYTES)
                    + row_ptr_entries as u64 * crate::summarize::CSR_ROWPTR_BYTES
            }
            Message::AugmenterModel { floats } => floats as u64 * w,
            Message::Block { params } => params as u64 * w + 32,
        }
    }

    /// Sent coordinate count for a sparse fraction: ceil(s·P).
    pub fn sparse_sent_count(params: usize, fraction: f64) -> usize {
        (fraction * params as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub round: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub direction: Direction,
    pub bytes: u64,
    pub sim_time: f64,
}

/// Append-only record of every simulated transmission; the ground truth
/// for all communication-efficiency claims.
#[derive(Debug, Clone, Default)]
pub struct PayloadLedger {
    entries: Vec<LedgerEntry>,
    round: u64,
    uplink_bytes: u64,
    downlink_bytes: u64,
    sim_time: f64,
}

impl PayloadLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_round(&mut self, round: u64) {
        self.round = round;
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn uplink_bytes(&self) -> u64 {
        self.uplink_bytes
    }

    pub fn downlink_bytes(&self) -> u64 {
        self.downlink_bytes
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    /// Charge a message over a link. Returns the transmission time in
    /// rounds (bits / per-direction capacity) and appends an entry.
    pub fn charge(
        &mut self,
        link: &LinkSpec,
        wire: &Wire,
        msg: &Message,
        direction: Direction,
        src: NodeId,
        dst: NodeId,
    ) -> f64 {
        let bytes = wire.payload_bytes(msg);
        self.charge_bytes(link, bytes, direction, src, dst)
    }

    pub fn charge_bytes(
        &mut self,
        link: &LinkSpec,
        bytes: u64,
        direction: Direction,
        src: NodeId,
        dst: NodeId,
    ) -> f64 {
        let capacity = match direction {
            Direction::Uplink => link.uplink_bits_per_round,
            Direction::Downlink => link.downlink_bits_per_round,
        };
        let delta = (bytes as f64) * 8.0 / capacity;
        match direction {
            Direction::Uplink => self.uplink_bytes += bytes,
            Direction::Downlink => self.downlink_bytes += bytes,
        }
        self.sim_time += delta;
        self.entries.push(LedgerEntry {
            round: self.round,
            src,
            dst,
            direction,
            bytes,
            sim_time: delta,
        });
        delta
    }

    /// CSV export with the fixed column set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,src,dst,direction,bytes,sim_time\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.round, e.src, e.dst, e.direction, e.bytes, e.sim_time
            ));
        }
        out
    }
}

/// Cost model: c_comp per local iteration per device, c_comm per
/// communication round, against a global total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBudget {
    pub c_comp: f64,
    pub c_comm: f64,
    pub total: f64,
}

impl CostBudget {
    pub fn validate(&self) -> Result<()> {
        if self.c_comp <= 0.0 || self.c_comm <= 0.0 || self.total <= 0.0 {
            return Err(Error::InvalidArgument(
                "budget costs and total must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetOutcome {
    Remaining(f64),
    Exhausted,
}

/// Running consumption against a `CostBudget`.
#[derive(Debug, Clone, Copy)]
pub struct BudgetState {
    pub budget: CostBudget,
    pub consumed: f64,
}

impl BudgetState {
    pub fn new(budget: CostBudget) -> Self {
        Self {
            budget,
            consumed: 0.0,
        }
    }

    pub fn remaining(&self) -> f64 {
        self.budget.total - self.consumed
    }

    /// Charge `iterations` local steps on each of `active_devices` devices
    /// plus `rounds` communication rounds. Exactly hitting the total is
    /// already Exhausted.
    pub fn consume(&mut self, iterations: u64, rounds: u64, active_devices: u64) -> BudgetOutcome {
        let cost = iterations as f64 * self.budget.c_comp * active_devices as f64
            + rounds as f64 * self.budget.c_comm;
        self.consumed += cost;
        let remaining = self.remaining();
        if remaining <= 0.0 {
            BudgetOutcome::Exhausted
        } else {
            BudgetOutcome::Remaining(remaining)
        }
    }

    /// Cost of one round of `tau` local iterations on `n` devices.
    pub fn round_cost(&self, tau: u64, n: u64) -> f64 {
        tau as f64 * self.budget.c_comp * n as f64 + self.budget.c_comm
    }
}
