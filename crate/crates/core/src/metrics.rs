//! Per-request latency records, aggregate summaries, and report writers.
//!
//! Reports are byte-stable: float aggregates are rounded to six decimal
//! places at construction and JSON field order follows struct declaration,
//! so identical runs always serialize identically.

use crate::config::EngineConfig;
use crate::types::Cu;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Latency row for one finished request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    /// Time from arrival to the first output token.
    pub ttft_cu: Cu,
    /// Time from arrival to the last output token.
    pub e2e_cu: Cu,
    pub preemptions: u32,
    pub output_tokens: usize,
}

/// Pool occupancy sampled after each executed step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub time: Cu,
    pub utilization: f64,
    pub internal_frag_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Clock time of the last executed step (0 for an empty run).
    pub makespan_cu: Cu,
    pub total_output_tokens: u64,
    pub throughput_tokens_per_cu: f64,
    pub mean_ttft_cu: f64,
    pub median_ttft_cu: Cu,
    pub p99_ttft_cu: Cu,
    pub mean_e2e_cu: f64,
    pub median_e2e_cu: Cu,
    pub p99_e2e_cu: Cu,
    pub peak_block_utilization: f64,
    pub mean_internal_frag_tokens: f64,
    pub rejected_count: u64,
}

/// Self-describing run report: the resolved config travels with the numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub config: EngineConfig,
    pub per_request: Vec<RequestRecord>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("percentile of an empty sample set")]
    EmptyInput,
}

/// Nearest-rank percentile: the ascending-sorted input's entry at 1-based
/// rank `ceil(p * n)`. `p` must lie in (0, 1].
pub fn percentile(sorted: &[u64], p: f64) -> Result<u64, MetricsError> {
    debug_assert!(p > 0.0 && p <= 1.0, "percentile rank must lie in (0, 1]");
    if sorted.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "input must be sorted");
    // The epsilon keeps decimal p on its exact rank: 0.9 * 1000 floats to
    // 900.0000000000000222, which would otherwise ceil to rank 901.
    let rank = (p * sorted.len() as f64 - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn mean_u64(values: &[u64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<u64>() as f64 / values.len() as f64
    }
}

/// Folds per-request rows and step samples into a full report. All float
/// aggregates are rounded to 6 decimals here, once, so serialization is
/// byte-stable. An empty run yields an all-zero aggregate block.
pub fn summarize(
    per_request: Vec<RequestRecord>,
    samples: &[StepSample],
    rejected_count: u64,
    config: &EngineConfig,
) -> MetricsReport {
    let mut ttft: Vec<u64> = per_request.iter().map(|r| r.ttft_cu).collect();
    let mut e2e: Vec<u64> = per_request.iter().map(|r| r.e2e_cu).collect();
    ttft.sort_unstable();
    e2e.sort_unstable();

    let makespan_cu = samples.last().map(|s| s.time).unwrap_or(0);
    let total_output_tokens: u64 = per_request.iter().map(|r| r.output_tokens as u64).sum();
    let throughput = if makespan_cu == 0 {
        0.0
    } else {
        total_output_tokens as f64 / makespan_cu as f64
    };

    let aggregates = Aggregates {
        makespan_cu,
        total_output_tokens,
        throughput_tokens_per_cu: round6(throughput),
        mean_ttft_cu: round6(mean_u64(&ttft)),
        median_ttft_cu: percentile(&ttft, 0.5).unwrap_or(0),
        p99_ttft_cu: percentile(&ttft, 0.99).unwrap_or(0),
        mean_e2e_cu: round6(mean_u64(&e2e)),
        median_e2e_cu: percentile(&e2e, 0.5).unwrap_or(0),
        p99_e2e_cu: percentile(&e2e, 0.99).unwrap_or(0),
        peak_block_utilization: round6(
            samples.iter().map(|s| s.utilization).fold(0.0, f64::max),
        ),
        mean_internal_frag_tokens: round6(mean_u64(
            &samples.iter().map(|s| s.internal_frag_tokens as u64).collect::<Vec<_>>(),
        )),
        rejected_count,
    };

    MetricsReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        per_request,
        aggregates,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: &str = "request_id,ttft_cu,e2e_cu,preemptions,output_tokens";

/// Serializes the report. JSON carries the full report (config included);
/// CSV carries the per-request table only, header first.
pub fn write_report(report: &MetricsReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut bytes =
                serde_json::to_vec_pretty(report).expect("report serialization cannot fail");
            bytes.push(b'\n');
            bytes
        }
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &report.per_request {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.request_id, r.ttft_cu, r.e2e_cu, r.preemptions, r.output_tokens
                ));
            }
            out.into_bytes()
        }
    }
}
