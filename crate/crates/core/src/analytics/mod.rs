//! Closed-form delay and overhead models, empirical CDFs, and
//! theory-versus-simulation reports.

mod ecdf;
mod renewal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ecdf::Ecdf;
pub use renewal::{
    order_stat, pbft_delay, process_delay, queued_delay, retrans_delay, verification_delay, waiting_time, DiscreteDist,
    OrderStat, ProcessDelay, Round, RoundKind, Viewpoint, WaitingTime,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    /// Overhead on an extended packet, percent.
    pub per_packet_pct: f64,
    /// Overhead averaged over all packets, percent.
    pub expected_pct: f64,
}

/// Channel load added by `extension_len` bytes on packets of
/// `packet_len` bytes when `extended` of `total` packets carry one.
pub fn overhead(extension_len: f64, packet_len: f64, extended: f64, total: f64) -> Result<Overhead, DomainError> {
    if packet_len <= 0.0 {
        return Err(DomainError("packet length must be positive".into()));
    }
    if total <= 0.0 || extended < 0.0 || extended > total {
        return Err(DomainError(format!(
            "need 0 <= extended <= total, total > 0; got {extended}/{total}"
        )));
    }
    Ok(Overhead {
        per_packet_pct: extension_len / packet_len * 100.0,
        expected_pct: extension_len * extended / (packet_len * total) * 100.0,
    })
}

/// One theory-versus-simulation line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub theory: f64,
    pub simulated: f64,
    pub rel_error: f64,
}

impl Comparison {
    pub fn new(metric: impl Into<String>, theory: f64, simulated: f64) -> Self {
        let rel_error = if theory == 0.0 {
            simulated.abs()
        } else {
            (simulated - theory).abs() / theory.abs()
        };
        Comparison {
            metric: metric.into(),
            theory,
            simulated,
            rel_error,
        }
    }
}

/// Inputs, closed-form outputs, and comparisons of one analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub inputs: serde_json::Map<String, serde_json::Value>,
    pub outputs: serde_json::Map<String, serde_json::Value>,
    pub comparisons: Vec<Comparison>,
}

impl AnalyticReport {
    pub fn input(&mut self, k: &str, v: impl Serialize) -> &mut Self {
        self.inputs.insert(
            k.to_string(),
            serde_json::to_value(v).unwrap_or(serde_json::Value::Null),
        );
        self
    }

    pub fn output(&mut self, k: &str, v: impl Serialize) -> &mut Self {
        self.outputs.insert(
            k.to_string(),
            serde_json::to_value(v).unwrap_or(serde_json::Value::Null),
        );
        self
    }

    pub fn compare(&mut self, metric: &str, theory: f64, simulated: f64) -> &mut Self {
        self.comparisons.push(Comparison::new(metric, theory, simulated));
        self
    }
}
