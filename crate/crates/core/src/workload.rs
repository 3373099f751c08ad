//! Reproducible request streams: a seed-driven generator plus trace-CSV
//! reading and writing.
//!
//! Trace files are plain CSV with the pinned header
//! `arrival_time_cu,prompt_tokens,output_tokens`; request ids are assigned
//! 0..n-1 in row order on load, so a generated list round-trips exactly.

use crate::rng::SplitMix64;
use crate::types::{Cu, Request};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

pub const TRACE_HEADER: &str = "arrival_time_cu,prompt_tokens,output_tokens";

/// How arrival times are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArrivalModel {
    /// Everything lands at t=0 (closed-loop stress shape).
    AtZero,
    /// Poisson process: exponential gaps with the given mean rate, expressed
    /// in requests per 1e6 cu (i.e. per simulated second).
    Poisson { rate_per_mcu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub n_requests: usize,
    pub arrival: ArrivalModel,
    /// Inclusive prompt length range.
    pub prompt_len: (usize, usize),
    /// Inclusive output length range.
    pub output_len: (usize, usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
}

impl WorkloadSpec {
    /// Checks ranges: token counts at least 1 and at most `max_model_len`,
    /// lo <= hi, and a positive finite Poisson rate.
    pub fn validate(&self, max_model_len: usize) -> Result<(), WorkloadError> {
        let check_range = |name: &str, (lo, hi): (usize, usize)| {
            if lo < 1 {
                return Err(WorkloadError::InvalidSpec(format!(
                    "{name} range starts at {lo}; token counts must be >= 1"
                )));
            }
            if lo > hi {
                return Err(WorkloadError::InvalidSpec(format!(
                    "{name} range [{lo}, {hi}] is empty"
                )));
            }
            if hi > max_model_len {
                return Err(WorkloadError::InvalidSpec(format!(
                    "{name} range reaches {hi}, beyond max_model_len ({max_model_len})"
                )));
            }
            Ok(())
        };
        check_range("prompt", self.prompt_len)?;
        check_range("output", self.output_len)?;
        if let ArrivalModel::Poisson { rate_per_mcu } = self.arrival {
            if !(rate_per_mcu > 0.0) || !rate_per_mcu.is_finite() {
                return Err(WorkloadError::InvalidSpec(format!(
                    "poisson rate must be positive and finite, got {rate_per_mcu}"
                )));
            }
        }
        Ok(())
    }

    /// Draws the request list. Per request the draw order is fixed: arrival
    /// gap (Poisson only), prompt length, output length, so a given seed
    /// always yields the same trace.
    pub fn generate(&self) -> Result<Vec<Request>, WorkloadError> {
        self.validate(usize::MAX)?;
        let mut rng = SplitMix64::new(self.seed);
        let mut requests = Vec::with_capacity(self.n_requests);
        let mut t: Cu = 0;
        for i in 0..self.n_requests {
            let arrival_time = match self.arrival {
                ArrivalModel::AtZero => 0,
                ArrivalModel::Poisson { rate_per_mcu } => {
                    let u = rng.next_unit();
                    let mean_gap_cu = 1e6 / rate_per_mcu;
                    t += (-libm::log(u) * mean_gap_cu).floor() as Cu;
                    t
                }
            };
            let prompt_len =
                rng.next_in_range(self.prompt_len.0 as u64, self.prompt_len.1 as u64) as usize;
            let target_output_len =
                rng.next_in_range(self.output_len.0 as u64, self.output_len.1 as u64) as usize;
            requests.push(Request {
                request_id: i as u64,
                arrival_time,
                prompt_len,
                target_output_len,
            });
        }
        Ok(requests)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace line {line}: {message}")]
    Range { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes the pinned CSV. Requests are written in the given order; callers
/// hand in arrival-sorted lists (everything `generate` returns already is).
pub fn save_trace<W: Write>(mut w: W, requests: &[Request]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in requests {
        writeln!(w, "{},{},{}", r.arrival_time, r.prompt_len, r.target_output_len)?;
    }
    Ok(())
}

pub fn save_trace_to_path<P: AsRef<Path>>(path: P, requests: &[Request]) -> io::Result<()> {
    let mut buf = Vec::new();
    save_trace(&mut buf, requests)?;
    fs::write(path, buf)
}

/// Parses the pinned CSV, assigning ids 0..n-1 in row order. Errors carry
/// 1-based line numbers; arrivals must be non-decreasing and token counts
/// at least 1.
pub fn load_trace(text: &str) -> Result<Vec<Request>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == TRACE_HEADER => {}
        Some((_, first)) => {
            return Err(TraceError::Parse {
                line: 1,
                message: format!("expected header `{TRACE_HEADER}`, found `{}`", first.trim()),
            })
        }
        None => {
            return Err(TraceError::Parse {
                line: 1,
                message: format!("empty file: expected header `{TRACE_HEADER}`"),
            })
        }
    }

    let mut requests = Vec::new();
    let mut last_arrival: Cu = 0;
    for (idx, raw) in lines {
        let line = idx + 1; // enumerate is 0-based
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 3 {
            return Err(TraceError::Parse {
                line,
                message: format!("expected 3 comma-separated fields, found {}", fields.len()),
            });
        }
        let parse = |name: &str, s: &str| -> Result<u64, TraceError> {
            s.trim().parse::<u64>().map_err(|e| TraceError::Parse {
                line,
                message: format!("{name} `{}`: {e}", s.trim()),
            })
        };
        let arrival_time = parse("arrival_time_cu", fields[0])?;
        let prompt_tokens = parse("prompt_tokens", fields[1])?;
        let output_tokens = parse("output_tokens", fields[2])?;
        if prompt_tokens < 1 {
            return Err(TraceError::Range {
                line,
                message: "prompt_tokens must be >= 1".to_string(),
            });
        }
        if output_tokens < 1 {
            return Err(TraceError::Range {
                line,
                message: "output_tokens must be >= 1".to_string(),
            });
        }
        if arrival_time < last_arrival {
            return Err(TraceError::Parse {
                line,
                message: format!(
                    "arrival times must be non-decreasing ({arrival_time} after {last_arrival})"
                ),
            });
        }
        last_arrival = arrival_time;
        requests.push(Request {
            request_id: requests.len() as u64,
            arrival_time,
            prompt_len: prompt_tokens as usize,
            target_output_len: output_tokens as usize,
        });
    }
    Ok(requests)
}

pub fn load_trace_from_path<P: AsRef<Path>>(path: P) -> Result<Vec<Request>, TraceError> {
    let text = fs::read_to_string(path)?;
    load_trace(&text)
}
