//! One request stream, two engines: weighted hash routing (ab mode) or full
//! mirroring behind an authoritative A (shadow mode), plus report diffing.
//!
//! Routing is sticky and deterministic: FNV-1a over the request id, reduced
//! mod 10_000 against `round(b_weight * 10_000)`. Shadow mode runs the whole
//! workload on both variants and treats A as authoritative.

use crate::config::ConfigError;
use crate::engine::{Engine, EngineError, RunOutput};
use crate::config::EngineConfig;
use crate::metrics::MetricsReport;
use crate::types::{Request, RequestId};
use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    A,
    B,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::A => write!(f, "A"),
            Variant::B => write!(f, "B"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Each request runs on exactly one variant, chosen by id hash.
    AbSplit,
    /// Every request runs on both variants; A is authoritative.
    Shadow,
}

#[derive(Clone, Debug)]
pub struct SplitConfig {
    pub variant_a: EngineConfig,
    pub variant_b: EngineConfig,
    /// Fraction of traffic routed to B in ab-split mode, in [0, 1].
    pub b_weight: f64,
    pub mode: SplitMode,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.b_weight) || !self.b_weight.is_finite() {
            return Err(ConfigError::BWeight(self.b_weight));
        }
        self.variant_a.validate()?;
        self.variant_b.validate()
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("route() is only defined in ab-split mode")]
    WrongMode,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("variant {variant}: {source}")]
    Engine { variant: Variant, source: EngineError },
}

/// FNV-1a 64-bit, pinned by constants so routing never shifts between
/// builds: offset 14695981039346656037, prime 1099511628211.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in data {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Sticky variant choice for one request id (ab-split mode only).
pub fn route(request_id: RequestId, split: &SplitConfig) -> Result<Variant, GatewayError> {
    if split.mode != SplitMode::AbSplit {
        return Err(GatewayError::WrongMode);
    }
    let threshold = (split.b_weight * 10_000.0).round() as u64;
    if fnv1a64(&request_id.to_le_bytes()) % 10_000 < threshold {
        Ok(Variant::B)
    } else {
        Ok(Variant::A)
    }
}

/// Both runs of one dispatch. In ab-split mode each engine saw its share of
/// the requests; in shadow mode both saw all of them.
#[derive(Clone, Debug)]
pub struct DispatchOutput {
    pub a: RunOutput,
    pub b: RunOutput,
}

/// Partitions (or mirrors) the workload and runs both variants to
/// completion. Runs are sequential and independent; a failure names the
/// variant it came from.
pub fn dispatch_workload(
    requests: &[Request],
    split: &SplitConfig,
) -> Result<DispatchOutput, GatewayError> {
    split.validate()?;
    let (for_a, for_b): (Vec<Request>, Vec<Request>) = match split.mode {
        SplitMode::Shadow => (requests.to_vec(), requests.to_vec()),
        SplitMode::AbSplit => {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for r in requests {
                match route(r.request_id, split).expect("mode checked above") {
                    Variant::A => a.push(*r),
                    Variant::B => b.push(*r),
                }
            }
            (a, b)
        }
    };
    let a = Engine::run_to_completion(split.variant_a.clone(), &for_a)
        .map_err(|source| GatewayError::Engine { variant: Variant::A, source })?;
    let b = Engine::run_to_completion(split.variant_b.clone(), &for_b)
        .map_err(|source| GatewayError::Engine { variant: Variant::B, source })?;
    Ok(DispatchOutput { a, b })
}

/// One aggregate compared across variants. `rel_delta` is `(b - a) / a`,
/// undefined when the A value is 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffRow {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    pub abs_delta: f64,
    pub rel_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffTable {
    pub rows: Vec<DiffRow>,
}

impl DiffTable {
    /// True when every metric is identical across variants.
    pub fn is_all_zero(&self) -> bool {
        self.rows.iter().all(|r| r.abs_delta == 0.0)
    }

    pub fn row(&self, metric: &str) -> Option<&DiffRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Fixed-width text table; relative deltas print as signed percentages
    /// with 4 decimals, `n/a` when A is zero.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>16} {:>16} {:>16} {:>12}\n",
            "metric", "a", "b", "abs_delta", "rel_delta"
        ));
        for r in &self.rows {
            let rel = match r.rel_delta {
                Some(v) => format!("{:+.4}%", v * 100.0),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{:<28} {:>16.6} {:>16.6} {:>16.6} {:>12}\n",
                r.metric, r.a, r.b, r.abs_delta, rel
            ));
        }
        out
    }

    /// CSV form: `metric,a,b,abs_delta,rel_delta` with `n/a` for undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,a,b,abs_delta,rel_delta\n");
        for r in &self.rows {
            let rel = match r.rel_delta {
                Some(v) => format!("{v}"),
                None => "n/a".to_string(),
            };
            out.push_str(&format!("{},{},{},{},{}\n", r.metric, r.a, r.b, r.abs_delta, rel));
        }
        out
    }
}

/// Side-by-side aggregate comparison of two reports.
pub fn diff_report(a: &MetricsReport, b: &MetricsReport) -> DiffTable {
    let pairs: [(&'static str, f64, f64); 12] = [
        ("makespan_cu", a.aggregates.makespan_cu as f64, b.aggregates.makespan_cu as f64),
        (
            "total_output_tokens",
            a.aggregates.total_output_tokens as f64,
            b.aggregates.total_output_tokens as f64,
        ),
        (
            "throughput_tokens_per_cu",
            a.aggregates.throughput_tokens_per_cu,
            b.aggregates.throughput_tokens_per_cu,
        ),
        ("mean_ttft_cu", a.aggregates.mean_ttft_cu, b.aggregates.mean_ttft_cu),
        ("median_ttft_cu", a.aggregates.median_ttft_cu as f64, b.aggregates.median_ttft_cu as f64),
        ("p99_ttft_cu", a.aggregates.p99_ttft_cu as f64, b.aggregates.p99_ttft_cu as f64),
        ("mean_e2e_cu", a.aggregates.mean_e2e_cu, b.aggregates.mean_e2e_cu),
        ("median_e2e_cu", a.aggregates.median_e2e_cu as f64, b.aggregates.median_e2e_cu as f64),
        ("p99_e2e_cu", a.aggregates.p99_e2e_cu as f64, b.aggregates.p99_e2e_cu as f64),
        (
            "peak_block_utilization",
            a.aggregates.peak_block_utilization,
            b.aggregates.peak_block_utilization,
        ),
        (
            "mean_internal_frag_tokens",
            a.aggregates.mean_internal_frag_tokens,
            b.aggregates.mean_internal_frag_tokens,
        ),
        ("rejected_count", a.aggregates.rejected_count as f64, b.aggregates.rejected_count as f64),
    ];
    let rows = pairs
        .into_iter()
        .map(|(metric, av, bv)| DiffRow {
            metric,
            a: av,
            b: bv,
            abs_delta: bv - av,
            rel_delta: if av == 0.0 { None } else { Some((bv - av) / av) },
        })
        .collect();
    DiffTable { rows }
}
