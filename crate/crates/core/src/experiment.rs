//! Flat dotted-key experiment files.
//!
//! One `key = value` per line; `#` starts a comment; blank lines are
//! ignored; unknown keys are errors (with their line number); assigning a
//! key twice keeps the later value. Key groups:
//!
//! ```text
//! engine.* / cost.*          engine for `run`
//! a.engine.* / a.cost.*      variant A for `compare` (starts from defaults)
//! b.engine.* / b.cost.*      variant B for `compare` (starts from defaults)
//! split.mode                 ab | shadow
//! split.b_weight             fraction of traffic to B in [0, 1]
//! workload.*                 inline generator spec or a trace file
//! output.path, output.format json | csv
//! ```
//!
//! Engine fields: `block_size`, `total_blocks`, `max_decode_batch`,
//! `prefill_token_budget`, `max_model_len`, `mode` (continuous | static),
//! `bucket_ladder` (comma-separated, strictly increasing). Cost fields:
//! `c_prefill_per_token`, `c_decode_fixed`, `c_decode_per_seq`,
//! `c_decode_per_ctx`. Workload fields: `seed`, `n_requests`, `arrival`
//! (at_zero | poisson), `rate_per_mcu`, `prompt_lo`, `prompt_hi`,
//! `output_lo`, `output_hi`, `trace` (path; mutually exclusive with the
//! inline fields).

use crate::bucket::BucketLadder;
use crate::config::{BatchMode, CostModel, EngineConfig};
use crate::gateway::SplitMode;
use crate::metrics::ReportFormat;
use crate::workload::{ArrivalModel, WorkloadSpec};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inline workload keys as written; resolved into a source lazily so `run`
/// can give precise "missing key" errors only when a workload is needed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkloadKeys {
    pub seed: Option<u64>,
    pub n_requests: Option<usize>,
    pub arrival: Option<ArrivalKind>,
    pub rate_per_mcu: Option<f64>,
    pub prompt_lo: Option<usize>,
    pub prompt_hi: Option<usize>,
    pub output_lo: Option<usize>,
    pub output_hi: Option<usize>,
    pub trace: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrivalKind {
    AtZero,
    Poisson,
}

/// Where the requests come from.
#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadSource {
    Spec(WorkloadSpec),
    Trace(String),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub engine: EngineConfig,
    pub variant_a: EngineConfig,
    pub variant_b: EngineConfig,
    pub split_mode: SplitMode,
    pub b_weight: f64,
    pub workload: WorkloadKeys,
    pub output_path: Option<String>,
    pub format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            variant_a: EngineConfig::default(),
            variant_b: EngineConfig::default(),
            split_mode: SplitMode::AbSplit,
            b_weight: 0.5,
            workload: WorkloadKeys::default(),
            output_path: None,
            format: ReportFormat::Json,
        }
    }
}

impl ExperimentConfig {
    /// Turns the raw workload keys into a source. `Ok(None)` when no
    /// workload key was set at all; an error when the keys are inconsistent
    /// (trace mixed with inline fields, ranges half-specified, a Poisson
    /// arrival without a rate).
    pub fn resolve_workload(&self) -> Result<Option<WorkloadSource>, String> {
        let w = &self.workload;
        let inline_set = w.seed.is_some()
            || w.n_requests.is_some()
            || w.arrival.is_some()
            || w.rate_per_mcu.is_some()
            || w.prompt_lo.is_some()
            || w.prompt_hi.is_some()
            || w.output_lo.is_some()
            || w.output_hi.is_some();
        if let Some(trace) = &w.trace {
            if inline_set {
                return Err(
                    "workload.trace and inline workload keys are mutually exclusive".to_string()
                );
            }
            return Ok(Some(WorkloadSource::Trace(trace.clone())));
        }
        if !inline_set {
            return Ok(None);
        }
        let need = |name: &str, v: Option<usize>| {
            v.ok_or_else(|| format!("inline workload needs workload.{name}"))
        };
        let n_requests = need("n_requests", w.n_requests)?;
        let prompt_len = (need("prompt_lo", w.prompt_lo)?, need("prompt_hi", w.prompt_hi)?);
        let output_len = (need("output_lo", w.output_lo)?, need("output_hi", w.output_hi)?);
        let arrival = match w.arrival.unwrap_or(ArrivalKind::AtZero) {
            ArrivalKind::AtZero => ArrivalModel::AtZero,
            ArrivalKind::Poisson => ArrivalModel::Poisson {
                rate_per_mcu: w
                    .rate_per_mcu
                    .ok_or("poisson arrivals need workload.rate_per_mcu")?,
            },
        };
        Ok(Some(WorkloadSource::Spec(WorkloadSpec {
            seed: w.seed.unwrap_or(0),
            n_requests,
            arrival,
            prompt_len,
            output_len,
        })))
    }
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig, ConfigFileError> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigFileError::Line {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        apply_key(&mut cfg, key.trim(), value.trim())
            .map_err(|message| ConfigFileError::Line { line: line_no, message })?;
    }
    Ok(cfg)
}

pub fn load_experiment<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig, ConfigFileError> {
    parse_experiment(&fs::read_to_string(path)?)
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    if let Some(rest) = key.strip_prefix("a.engine.") {
        return apply_engine_field(&mut cfg.variant_a, rest, value);
    }
    if let Some(rest) = key.strip_prefix("a.cost.") {
        return apply_cost_field(&mut cfg.variant_a.cost_model, rest, value);
    }
    if let Some(rest) = key.strip_prefix("b.engine.") {
        return apply_engine_field(&mut cfg.variant_b, rest, value);
    }
    if let Some(rest) = key.strip_prefix("b.cost.") {
        return apply_cost_field(&mut cfg.variant_b.cost_model, rest, value);
    }
    if let Some(rest) = key.strip_prefix("engine.") {
        return apply_engine_field(&mut cfg.engine, rest, value);
    }
    if let Some(rest) = key.strip_prefix("cost.") {
        return apply_cost_field(&mut cfg.engine.cost_model, rest, value);
    }
    if let Some(rest) = key.strip_prefix("workload.") {
        return apply_workload_field(&mut cfg.workload, rest, value);
    }
    match key {
        "split.mode" => {
            cfg.split_mode = match value {
                "ab" => SplitMode::AbSplit,
                "shadow" => SplitMode::Shadow,
                other => return Err(format!("split.mode must be `ab` or `shadow`, got `{other}`")),
            };
            Ok(())
        }
        "split.b_weight" => {
            cfg.b_weight = parse_num::<f64>("split.b_weight", value)?;
            Ok(())
        }
        "output.path" => {
            cfg.output_path = Some(value.to_string());
            Ok(())
        }
        "output.format" => {
            cfg.format = match value {
                "json" => ReportFormat::Json,
                "csv" => ReportFormat::Csv,
                other => {
                    return Err(format!("output.format must be `json` or `csv`, got `{other}`"))
                }
            };
            Ok(())
        }
        other => Err(format!("unknown key `{other}`")),
    }
}

fn apply_engine_field(engine: &mut EngineConfig, field: &str, value: &str) -> Result<(), String> {
    match field {
        "block_size" => engine.block_size = parse_num(field, value)?,
        "total_blocks" => engine.total_blocks = parse_num(field, value)?,
        "max_decode_batch" => engine.max_decode_batch = parse_num(field, value)?,
        "prefill_token_budget" => engine.prefill_token_budget = parse_num(field, value)?,
        "max_model_len" => engine.max_model_len = parse_num(field, value)?,
        "mode" => {
            engine.mode = match value {
                "continuous" => BatchMode::Continuous,
                "static" => BatchMode::Static,
                other => {
                    return Err(format!("mode must be `continuous` or `static`, got `{other}`"))
                }
            }
        }
        "bucket_ladder" => {
            let buckets = value
                .split(',')
                .map(|s| parse_num::<usize>("bucket_ladder entry", s.trim()))
                .collect::<Result<Vec<usize>, String>>()?;
            engine.bucket_ladder = BucketLadder::new(buckets).map_err(|e| e.to_string())?;
        }
        other => return Err(format!("unknown engine field `{other}`")),
    }
    Ok(())
}

fn apply_cost_field(cost: &mut CostModel, field: &str, value: &str) -> Result<(), String> {
    match field {
        "c_prefill_per_token" => cost.c_prefill_per_token = parse_num(field, value)?,
        "c_decode_fixed" => cost.c_decode_fixed = parse_num(field, value)?,
        "c_decode_per_seq" => cost.c_decode_per_seq = parse_num(field, value)?,
        "c_decode_per_ctx" => cost.c_decode_per_ctx = parse_num(field, value)?,
        other => return Err(format!("unknown cost field `{other}`")),
    }
    Ok(())
}

fn apply_workload_field(w: &mut WorkloadKeys, field: &str, value: &str) -> Result<(), String> {
    match field {
        "seed" => w.seed = Some(parse_num(field, value)?),
        "n_requests" => w.n_requests = Some(parse_num(field, value)?),
        "arrival" => {
            w.arrival = Some(match value {
                "at_zero" => ArrivalKind::AtZero,
                "poisson" => ArrivalKind::Poisson,
                other => {
                    return Err(format!("arrival must be `at_zero` or `poisson`, got `{other}`"))
                }
            })
        }
        "rate_per_mcu" => w.rate_per_mcu = Some(parse_num(field, value)?),
        "prompt_lo" => w.prompt_lo = Some(parse_num(field, value)?),
        "prompt_hi" => w.prompt_hi = Some(parse_num(field, value)?),
        "output_lo" => w.output_lo = Some(parse_num(field, value)?),
        "output_hi" => w.output_hi = Some(parse_num(field, value)?),
        "trace" => w.trace = Some(value.to_string()),
        other => return Err(format!("unknown workload field `{other}`")),
    }
    Ok(())
}

fn parse_num<T: FromStr>(name: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{name}: cannot parse `{value}`: {e}"))
}
