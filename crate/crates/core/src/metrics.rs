//! Per-round metrics rows and their CSV encoding. Column set and order are
//! fixed; cumulative columns are monotone non-decreasing by construction.

use serde::Serialize;

pub const METRICS_HEADER: &str =
    "round,tau,cum_uplink_bits,cum_downlink_bits,cum_cost,train_loss,test_acc,sim_time";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub round: u64,
    /// Communication interval in effect this round, when the protocol has one.
    pub tau: Option<u64>,
    pub cum_uplink_bits: u64,
    pub cum_downlink_bits: u64,
    pub cum_cost: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub sim_time: f64,
}

impl MetricsRow {
    fn csv_line(&self) -> String {
        let tau = self.tau.map(|t| t.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            tau,
            self.cum_uplink_bits,
            self.cum_downlink_bits,
            self.cum_cost,
            self.train_loss,
            self.test_acc,
            self.sim_time
        )
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}
